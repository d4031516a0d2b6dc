#include "nca_scope/homology.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <queue>
#include <sstream>
#include <unordered_map>

#include "nca_scope/common.hpp"

namespace nca_scope {

DistanceMatrix::DistanceMatrix(std::size_t n, std::vector<double> condensed) : n_(n), condensed_(std::move(condensed)) {
    if (condensed_.size() != n * (n - (n > 0 ? 1 : 0)) / 2)
        throw ContractError("condensed distance vector has the wrong length");
    for (double d : condensed_)
        if (!(d >= 0.0) || !std::isfinite(d)) throw ContractError("distances must be finite and nonnegative");
}

double DistanceMatrix::operator()(std::size_t i, std::size_t j) const {
    if (i == j) return 0.0;
    if (i > j) std::swap(i, j);
    return condensed_[i * n_ - i * (i + 1) / 2 + (j - i - 1)];
}

double DistanceMatrix::max() const {
    return condensed_.empty() ? 0.0 : *std::max_element(condensed_.begin(), condensed_.end());
}

DistanceMatrix distance_matrix(const PointMatrix& points) {
    const std::size_t n = static_cast<std::size_t>(points.rows());
    if (n == 0) throw ContractError("distance matrix needs at least one point");
    if (!points.allFinite()) throw ContractError("point cloud has non-finite entries");
    std::vector<double> condensed(n * (n - 1) / 2);
    parallel_for(n, [&](std::size_t i) {
        std::size_t k = i * n - i * (i + 1) / 2;
        for (std::size_t j = i + 1; j < n; ++j) condensed[k++] = (points.row(i) - points.row(j)).norm();
    });
    return DistanceMatrix(n, std::move(condensed));
}

std::vector<std::size_t> maxmin_subsample(const PointMatrix& points, std::size_t budget, std::uint64_t rng_seed) {
    const std::size_t n = static_cast<std::size_t>(points.rows());
    if (n == 0) throw ContractError("cannot subsample an empty cloud");
    if (budget == 0) throw ContractError("subsample budget must be positive");
    budget = std::min(budget, n);
    std::vector<std::size_t> chosen;
    chosen.reserve(budget);
    chosen.push_back(static_cast<std::size_t>(hash_key(rng_seed, 0x6d61786dULL) % n));
    std::vector<double> nearest(n, kInfinity);
    while (chosen.size() < budget) {
        const auto last = points.row(static_cast<Eigen::Index>(chosen.back()));
        std::size_t best = 0;
        double best_dist = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
            nearest[i] = std::min(nearest[i], (points.row(static_cast<Eigen::Index>(i)) - last).squaredNorm());
            if (nearest[i] > best_dist) {
                best_dist = nearest[i];
                best = i;
            }
        }
        chosen.push_back(best);
    }
    return chosen;
}

double ph_coverage(std::size_t budget, std::size_t points) {
    if (points == 0) throw ContractError("coverage of an empty cloud is undefined");
    return static_cast<double>(std::min(budget, points)) / static_cast<double>(points);
}

std::size_t PersistenceDiagram::count(int dim) const {
    return static_cast<std::size_t>(
        std::count_if(intervals.begin(), intervals.end(), [&](const auto& iv) { return iv.dim == dim; }));
}

std::vector<PersistenceInterval> PersistenceDiagram::in_dim(int dim) const {
    std::vector<PersistenceInterval> out;
    for (const auto& iv : intervals)
        if (iv.dim == dim) out.push_back(iv);
    return out;
}

double PersistenceDiagram::max_finite_death() const {
    double best = 0.0;
    for (const auto& iv : intervals)
        if (!iv.infinite()) best = std::max(best, iv.death);
    return best;
}

std::vector<PersistenceInterval> PersistenceDiagram::sorted() const {
    auto out = intervals;
    std::sort(out.begin(), out.end());
    return out;
}

double enclosing_radius(const DistanceMatrix& dist) {
    const std::size_t n = dist.size();
    if (n <= 1) return 0.0;
    double best = kInfinity;
    for (std::size_t i = 0; i < n; ++i) {
        double worst = 0.0;
        for (std::size_t j = 0; j < n; ++j) worst = std::max(worst, dist(i, j));
        best = std::min(best, worst);
    }
    return best;
}

namespace {

using Index = std::int64_t;

struct Simplex {
    double diam;
    Index index;
};

/// Filtration order: diameter ascending, then index descending.
inline bool earlier(const Simplex& a, const Simplex& b) {
    return a.diam < b.diam || (a.diam == b.diam && a.index > b.index);
}

struct LaterFirst {
    bool operator()(const Simplex& a, const Simplex& b) const { return earlier(b, a); }
};

/// Min-heap in filtration order; equal indices cancel (Z/2).
using Column = std::priority_queue<Simplex, std::vector<Simplex>, LaterFirst>;

std::optional<Simplex> pop_pivot(Column& col) {
    while (!col.empty()) {
        Simplex pivot = col.top();
        col.pop();
        if (col.empty() || col.top().index != pivot.index) return pivot;
        col.pop();
    }
    return std::nullopt;
}

std::optional<Simplex> get_pivot(Column& col) {
    auto pivot = pop_pivot(col);
    if (pivot) col.push(*pivot);
    return pivot;
}

class Binomials {
public:
    Binomials(Index n, int k) : k_max_(k + 1), table_(static_cast<std::size_t>((n + 1) * (k + 1)), 0) {
        for (Index v = 0; v <= n; ++v) {
            at(v, 0) = 1;
            for (int j = 1; j <= std::min<Index>(v, k); ++j) {
                const __int128 sum = static_cast<__int128>(at(v - 1, j - 1)) + (j <= v - 1 ? at(v - 1, j) : 0);
                if (sum > std::numeric_limits<Index>::max() / 4)
                    throw CapacityError("simplex index overflow for " + std::to_string(n) +
                                        " points; subsample the cloud (try maxmin_subsample)");
                at(v, j) = static_cast<Index>(sum);
            }
        }
    }
    Index operator()(Index v, int k) const { return k > v ? 0 : table_[static_cast<std::size_t>(v * k_max_ + k)]; }

private:
    Index& at(Index v, int k) { return table_[static_cast<std::size_t>(v * k_max_ + k)]; }
    Index k_max_;
    std::vector<Index> table_;
};

class RipsReducer {
public:
    RipsReducer(const DistanceMatrix& dist, int max_dim, double threshold, std::size_t max_simplices)
        : n_(static_cast<Index>(dist.size())),
          max_dim_(max_dim),
          threshold_(threshold),
          max_simplices_(max_simplices),
          binom_(n_, max_dim + 2),
          dense_(dist.size() * dist.size(), 0.0) {
        for (std::size_t i = 0; i < dist.size(); ++i)
            for (std::size_t j = i + 1; j < dist.size(); ++j) dense_[i * dist.size() + j] = dense_[j * dist.size() + i] = dist(i, j);
    }

    PersistenceDiagram run() {
        PersistenceDiagram diagram;
        diagram.max_dim = max_dim_;
        diagram.max_radius = threshold_;
        out_ = &diagram.intervals;

        std::vector<Simplex> simplices, columns;
        dim0_pairs(simplices, columns);
        for (int dim = 1; dim <= max_dim_; ++dim) {
            std::unordered_map<Index, std::size_t> pivots;
            pivots.reserve(columns.size());
            reduce(columns, pivots, dim);
            if (dim < max_dim_) assemble(simplices, columns, pivots, dim + 1);
        }
        return diagram;
    }

private:
    double dist(Index i, Index j) const { return dense_[static_cast<std::size_t>(i * n_ + j)]; }

    Index max_vertex(Index idx, int k, Index top) const {
        Index lo = k - 1, hi = top;
        while (lo < hi) {
            const Index mid = hi - (hi - lo) / 2;
            if (binom_(mid, k) <= idx) lo = mid;
            else hi = mid - 1;
        }
        return lo;
    }

    void vertices(Index idx, int dim, std::vector<Index>& out) const {
        out.clear();
        Index v = n_ - 1;
        for (int k = dim + 1; k >= 1; --k) {
            v = max_vertex(idx, k, v);
            out.push_back(v);
            idx -= binom_(v, k);
        }
    }

    /// Cofacets in order of decreasing index (new vertex from n-1 down).
    class Cofacets {
    public:
        Cofacets(const RipsReducer& r, const Simplex& s, int dim)
            : r_(r), below_(s.index), above_(0), v_(r.n_ - 1), k_(dim + 1), diam_(s.diam) {
            r.vertices(s.index, dim, verts_);
        }
        bool has_next(bool all = true) const { return v_ >= k_ && (all || r_.binom_(v_, k_) > below_); }
        Simplex next() {
            while (r_.binom_(v_, k_) <= below_) {
                below_ -= r_.binom_(v_, k_);
                above_ += r_.binom_(v_, k_ + 1);
                --v_;
                --k_;
            }
            double d = diam_;
            for (Index w : verts_) d = std::max(d, r_.dist(v_, w));
            const Index idx = above_ + r_.binom_(v_, k_ + 1) + below_;
            --v_;
            return {d, idx};
        }

    private:
        const RipsReducer& r_;
        Index below_, above_, v_;
        int k_;
        double diam_;
        std::vector<Index> verts_;
    };

    /// Earliest cofacet, when it shares the simplex's diameter.
    std::optional<Simplex> zero_pivot_cofacet(const Simplex& s, int dim) const {
        Cofacets it(*this, s, dim);
        while (it.has_next()) {
            const Simplex c = it.next();
            if (c.diam == s.diam) return c;
        }
        return std::nullopt;
    }

    /// Latest facet, when it shares the simplex's diameter.
    std::optional<Simplex> zero_pivot_facet(const Simplex& s, int dim) const {
        std::vector<Index> verts;
        vertices(s.index, dim, verts);
        std::optional<Simplex> best;
        for (std::size_t skip = 0; skip < verts.size(); ++skip) {
            Index idx = 0;
            double diam = 0.0;
            int k = dim;
            for (std::size_t i = 0; i < verts.size(); ++i) {
                if (i == skip) continue;
                idx += binom_(verts[i], k--);
                for (std::size_t j = i + 1; j < verts.size(); ++j)
                    if (j != skip) diam = std::max(diam, dist(verts[i], verts[j]));
            }
            if (diam == s.diam && (!best || idx < best->index)) best = Simplex{diam, idx};
        }
        return best;
    }

    /// A zero-persistence pair whose coboundary column needs no reduction.
    std::optional<Simplex> apparent_cofacet(const Simplex& s, int dim) const {
        const auto c = zero_pivot_cofacet(s, dim);
        if (!c) return std::nullopt;
        const auto f = zero_pivot_facet(*c, dim + 1);
        return f && f->index == s.index ? c : std::nullopt;
    }

    std::optional<Simplex> apparent_facet(const Simplex& s, int dim) const {
        const auto f = zero_pivot_facet(s, dim);
        if (!f) return std::nullopt;
        const auto c = zero_pivot_cofacet(*f, dim - 1);
        return c && c->index == s.index ? f : std::nullopt;
    }

    bool in_apparent_pair(const Simplex& s, int dim) const { return apparent_cofacet(s, dim) || apparent_facet(s, dim); }

    void guard(std::size_t count, int dim) const {
        if (count > max_simplices_)
            throw CapacityError("more than " + std::to_string(max_simplices_) + " simplices in dimension " +
                                std::to_string(dim) + "; subsample the cloud or lower max_radius");
    }

    void dim0_pairs(std::vector<Simplex>& edges, std::vector<Simplex>& columns) {
        edges.clear();
        for (Index i = 1; i < n_; ++i)
            for (Index j = 0; j < i; ++j) {
                const double d = dist(i, j);
                if (d <= threshold_) edges.push_back({d, binom_(i, 2) + j});
            }
        guard(edges.size(), 1);
        std::sort(edges.begin(), edges.end(), earlier);

        std::vector<Index> parent(static_cast<std::size_t>(n_));
        std::iota(parent.begin(), parent.end(), Index{0});
        auto find = [&](Index x) {
            while (parent[static_cast<std::size_t>(x)] != x) {
                auto& p = parent[static_cast<std::size_t>(x)];
                p = parent[static_cast<std::size_t>(p)];
                x = p;
            }
            return x;
        };
        columns.clear();
        std::vector<Index> verts;
        for (const auto& e : edges) {
            vertices(e.index, 1, verts);
            const Index a = find(verts[0]), b = find(verts[1]);
            if (a != b) {
                parent[static_cast<std::size_t>(std::max(a, b))] = std::min(a, b);
                out_->push_back({0, 0.0, e.diam});
            } else if (!apparent_cofacet(e, 1)) {
                columns.push_back(e);
            }
        }
        std::reverse(columns.begin(), columns.end());
        for (Index v = 0; v < n_; ++v)
            if (find(v) == v) out_->push_back({0, 0.0, kInfinity});
    }

    void add_coboundary(const Simplex& s, int dim, Column& reduction, Column& coboundary) const {
        reduction.push(s);
        Cofacets it(*this, s, dim);
        while (it.has_next()) {
            const Simplex c = it.next();
            if (c.diam <= threshold_) coboundary.push(c);
        }
    }

    std::optional<Simplex> init_pivot(const Simplex& s, int dim, Column& coboundary,
                                      const std::unordered_map<Index, std::size_t>& pivots) {
        cofacet_cache_.clear();
        bool check_emergent = true;
        Cofacets it(*this, s, dim);
        while (it.has_next()) {
            const Simplex c = it.next();
            if (c.diam > threshold_) continue;
            cofacet_cache_.push_back(c);
            if (check_emergent && c.diam == s.diam) {
                if (!pivots.count(c.index) && !apparent_facet(c, dim + 1)) return c;
                check_emergent = false;
            }
        }
        for (const auto& c : cofacet_cache_) coboundary.push(c);
        return get_pivot(coboundary);
    }

    void reduce(const std::vector<Simplex>& columns, std::unordered_map<Index, std::size_t>& pivots, int dim) {
        std::vector<std::size_t> offsets{0};
        std::vector<Simplex> entries;
        for (std::size_t i = 0; i < columns.size(); ++i) {
            const Simplex& column = columns[i];
            Column reduction, coboundary;
            auto pivot = init_pivot(column, dim, coboundary, pivots);
            while (true) {
                if (!pivot) {
                    out_->push_back({dim, column.diam, kInfinity});
                    break;
                }
                const auto hit = pivots.find(pivot->index);
                if (hit != pivots.end()) {
                    const std::size_t j = hit->second;
                    add_coboundary(columns[j], dim, reduction, coboundary);
                    for (std::size_t e = offsets[j]; e < offsets[j + 1]; ++e) add_coboundary(entries[e], dim, reduction, coboundary);
                    pivot = get_pivot(coboundary);
                    continue;
                }
                if (const auto facet = apparent_facet(*pivot, dim + 1)) {
                    add_coboundary(*facet, dim, reduction, coboundary);
                    pivot = get_pivot(coboundary);
                    continue;
                }
                if (pivot->diam > column.diam) out_->push_back({dim, column.diam, pivot->diam});
                pivots.emplace(pivot->index, i);
                while (auto e = pop_pivot(reduction)) entries.push_back(*e);
                break;
            }
            offsets.push_back(entries.size());
        }
    }

    void assemble(std::vector<Simplex>& simplices, std::vector<Simplex>& columns,
                  const std::unordered_map<Index, std::size_t>& pivots, int dim) {
        std::vector<Simplex> next;
        columns.clear();
        for (const auto& s : simplices) {
            Cofacets it(*this, s, dim - 1);
            while (it.has_next(false)) {
                const Simplex c = it.next();
                if (c.diam > threshold_) continue;
                if (dim < max_dim_) next.push_back(c);
                if (!pivots.count(c.index) && !in_apparent_pair(c, dim)) columns.push_back(c);
            }
            guard(std::max(next.size(), columns.size()), dim);
        }
        simplices.swap(next);
        std::sort(columns.begin(), columns.end(), [](const Simplex& a, const Simplex& b) { return earlier(b, a); });
    }

    Index n_;
    int max_dim_;
    double threshold_;
    std::size_t max_simplices_;
    Binomials binom_;
    std::vector<double> dense_;
    std::vector<Simplex> cofacet_cache_;
    std::vector<PersistenceInterval>* out_ = nullptr;
};

}  // namespace

PersistenceDiagram rips_persistence(const DistanceMatrix& dist, int max_dim, double max_radius,
                                    std::size_t max_simplices) {
    if (dist.size() == 0) throw ContractError("persistence needs at least one point");
    if (max_dim < 0 || max_dim > 2) throw ContractError("max_dim must be 0, 1 or 2");
    if (max_radius < 0.0) max_radius = enclosing_radius(dist);
    else if (!(max_radius > 0.0)) throw ContractError("max_radius must be positive");
    RipsReducer reducer(dist, max_dim, max_radius, max_simplices);
    return reducer.run();
}

double default_significance_threshold(const PersistenceDiagram& diagram) {
    return kDefaultSignificanceFraction * diagram.max_finite_death();
}

BettiReport betti_report(const PersistenceDiagram& diagram, std::optional<double> threshold) {
    BettiReport report;
    report.significance_threshold = threshold.value_or(default_significance_threshold(diagram));
    if (report.significance_threshold < 0.0) throw ContractError("significance threshold must be nonnegative");
    for (const auto& iv : diagram.intervals)
        if (iv.dim >= 0 && iv.dim <= 2 && (iv.infinite() || iv.persistence() > report.significance_threshold))
            ++report.counts[static_cast<std::size_t>(iv.dim)];
    return report;
}

std::array<int, 3> betti_at(const PersistenceDiagram& diagram, double radius) {
    std::array<int, 3> counts{};
    for (const auto& iv : diagram.intervals)
        if (iv.dim >= 0 && iv.dim <= 2 && iv.birth <= radius && radius < iv.death)
            ++counts[static_cast<std::size_t>(iv.dim)];
    return counts;
}

void write_diagram_csv(const PersistenceDiagram& diagram, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    out << "dim,birth,death\n";
    char buf[64];
    for (const auto& iv : diagram.sorted()) {
        out << iv.dim << ',';
        std::snprintf(buf, sizeof buf, "%.17g", iv.birth);
        out << buf << ',';
        if (iv.infinite()) {
            out << "inf\n";
        } else {
            std::snprintf(buf, sizeof buf, "%.17g", iv.death);
            out << buf << '\n';
        }
    }
}

PersistenceDiagram read_diagram_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line.rfind("dim,birth,death", 0) != 0)
        throw FormatError(path + ": expected header dim,birth,death");
    PersistenceDiagram diagram;
    auto number = [&](const std::string& field, std::size_t lineno) {
        if (field == "inf") return kInfinity;
        double v = 0.0;
        const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
        if (res.ec != std::errc() || res.ptr != field.data() + field.size())
            throw FormatError(path + ":" + std::to_string(lineno) + ": bad number '" + field + "'");
        return v;
    };
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream row(line);
        std::string a, b, c;
        if (!std::getline(row, a, ',') || !std::getline(row, b, ',') || !std::getline(row, c))
            throw FormatError(path + ":" + std::to_string(lineno) + ": expected three fields");
        PersistenceInterval iv{static_cast<int>(number(a, lineno)), number(b, lineno), number(c, lineno)};
        diagram.max_dim = std::max(diagram.max_dim, iv.dim);
        diagram.intervals.push_back(iv);
    }
    return diagram;
}

}  // namespace nca_scope
