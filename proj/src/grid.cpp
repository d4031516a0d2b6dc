#include "nca_scope/grid.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>

#include "nca_scope/common.hpp"

namespace nca_scope {

using nlohmann::json;

GridState::GridState(int h, int w, int c, ChannelMode m)
    : height(h), width(w), channels(c), mode(m),
      values(static_cast<std::size_t>(h) * w * c, 0.0f) {
    if (h <= 0 || w <= 0 || c < 3)
        throw ContractError("grid needs positive dims and at least 3 channels");
    if (m == ChannelMode::RgbaAlive && c < 4)
        throw ContractError("RGBA_ALIVE grids need at least 4 channels");
}

bool GridState::all_finite() const {
    return std::all_of(values.begin(), values.end(), [](float v) { return std::isfinite(v); });
}

void EventScript::validate(int height, int width, int channels) const {
    long previous = 0;
    for (std::size_t i = 0; i < events.size(); ++i) {
        const Event& e = events[i];
        const std::string where = "event " + std::to_string(i);
        if (e.timestep < 0) throw ValidationError(where + ": negative timestep");
        if (e.timestep < previous) throw ValidationError(where + ": timesteps must be nondecreasing");
        previous = e.timestep;
        if (const auto* s = std::get_if<SignalEvent>(&e.payload)) {
            if (s->row < 0 || s->row >= height || s->col < 0 || s->col >= width)
                throw ValidationError(where + ": signal centre outside grid");
            if (s->target_channel < 0 || s->target_channel >= channels)
                throw ValidationError(where + ": signal channel out of range");
            if (s->radius < 0 || s->jitter_radius < 0)
                throw ValidationError(where + ": negative signal radius");
        } else {
            const Rect& r = std::get<PerturbEvent>(e.payload).rect;
            if (r.row0 < 0 || r.col0 < 0 || r.row1 > height || r.col1 > width || r.row0 > r.row1 ||
                r.col0 > r.col1)
                throw ValidationError(where + ": perturbation rectangle outside grid");
        }
    }
}

long EventScript::signal_count() const {
    return static_cast<long>(
        std::count_if(events.begin(), events.end(), [](const Event& e) { return e.is_signal(); }));
}

namespace {

json event_to_json(const Event& e) {
    json j;
    j["t"] = e.timestep;
    if (const auto* s = std::get_if<SignalEvent>(&e.payload)) {
        j["kind"] = "signal";
        j["row"] = s->row;
        j["col"] = s->col;
        j["jitter"] = s->jitter_radius;
        j["channel"] = s->target_channel;
        j["value"] = s->value;
        j["radius"] = s->radius;
    } else {
        const auto& p = std::get<PerturbEvent>(e.payload);
        j["kind"] = "perturb";
        j["rect"] = {p.rect.row0, p.rect.col0, p.rect.row1, p.rect.col1};
        j["fill"] = p.fill;
    }
    return j;
}

Event event_from_json(const json& j) {
    Event e;
    e.timestep = j.at("t").get<long>();
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "signal") {
        SignalEvent s;
        s.row = j.at("row").get<int>();
        s.col = j.at("col").get<int>();
        s.jitter_radius = j.value("jitter", 0);
        s.target_channel = j.at("channel").get<int>();
        s.value = j.value("value", 1.0f);
        s.radius = j.value("radius", 1);
        e.payload = s;
    } else if (kind == "perturb") {
        PerturbEvent p;
        const auto& r = j.at("rect");
        if (!r.is_array() || r.size() != 4) throw ValidationError("perturb rect must be [r0,c0,r1,c1]");
        p.rect = {r[0].get<int>(), r[1].get<int>(), r[2].get<int>(), r[3].get<int>()};
        p.fill = j.value("fill", 0.0f);
        e.payload = p;
    } else {
        throw ValidationError("unknown event kind '" + kind + "'");
    }
    return e;
}

}  // namespace

std::string EventScript::to_json() const {
    json arr = json::array();
    for (const auto& e : events) arr.push_back(event_to_json(e));
    return arr.dump();
}

EventScript EventScript::from_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("event script is not valid JSON: ") + e.what());
    }
    // Accept either a bare array or {"events": [...]}.
    const json& arr = doc.is_object() ? doc.at("events") : doc;
    EventScript script;
    try {
        for (const auto& item : arr) script.events.push_back(event_from_json(item));
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed event: ") + e.what());
    }
    return script;
}

EventScript periodic_signals(const SignalEvent& signal, long period, long steps, long first, long last) {
    if (period <= 0) throw ContractError("signal period must be positive");
    if (first < 0) first = period;
    if (last < 0) last = steps;
    EventScript script;
    for (long t = first; t < steps && t < last; t += period) script.events.push_back({t, signal});
    return script;
}

EventScript merge_scripts(const EventScript& a, const EventScript& b) {
    EventScript out;
    out.events.reserve(a.events.size() + b.events.size());
    std::merge(a.events.begin(), a.events.end(), b.events.begin(), b.events.end(),
               std::back_inserter(out.events),
               [](const Event& x, const Event& y) { return x.timestep < y.timestep; });
    return out;
}

}  // namespace nca_scope
