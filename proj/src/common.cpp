#include "nca_scope/common.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <thread>

namespace nca_scope {

namespace binio {

void write_magic(std::ostream& out, std::string_view magic) {
    out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

void expect_magic(std::istream& in, std::string_view magic) {
    std::string buf(magic.size(), '\0');
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() != static_cast<std::streamsize>(buf.size()))
        throw TruncatedError("file too short for magic '" + std::string(magic) + "'");
    if (buf != magic)
        throw CorruptHeaderError("bad magic: expected '" + std::string(magic) + "'");
}

}  // namespace binio

std::uint64_t fnv1a64(std::span<const std::byte> bytes, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (std::byte b : bytes) {
        h ^= static_cast<std::uint64_t>(b);
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t fnv1a64_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path + " for hashing");
    std::uint64_t h = 0xcbf29ce484222325ULL;
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        auto got = static_cast<std::size_t>(in.gcount());
        h = fnv1a64(std::as_bytes(std::span(buf.data(), got)), h);
    }
    return h;
}

std::string hex64(std::uint64_t value) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
    return buf;
}

int thread_count() {
    if (const char* env = std::getenv("NCA_SCOPE_THREADS")) {
        int n = std::atoi(env);
        if (n > 0) return n;
    }
    return 1;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
    const auto workers = static_cast<std::size_t>(std::min<std::size_t>(thread_count(), n));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += workers) body(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace nca_scope
