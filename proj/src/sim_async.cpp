#include "gnomes/sim_async.hpp"

#include "gnomes/sim_sync.hpp" // ScenarioError

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <stdexcept>

namespace gnomes {

DelayModel::Kind delay_kind_from_string(const std::string& s) {
    if (s == "constant") return DelayModel::Kind::Constant;
    if (s == "uniform") return DelayModel::Kind::Uniform;
    if (s == "per-edge-fixed") return DelayModel::Kind::PerEdgeFixed;
    throw std::invalid_argument("unknown delay kind: " + s);
}

std::string to_string(DelayModel::Kind k) {
    switch (k) {
    case DelayModel::Kind::Constant: return "constant";
    case DelayModel::Kind::Uniform: return "uniform";
    case DelayModel::Kind::PerEdgeFixed: return "per-edge-fixed";
    }
    return "?";
}

namespace {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Message delays keyed by edge and per-edge sequence number, so a message
// keeps its delay no matter how simultaneous events are tie-broken.
double sample_delay(const DelayModel& m, GnomeId from, GnomeId to, std::uint64_t k) {
    switch (m.kind) {
    case DelayModel::Kind::Constant: return m.tau_max;
    case DelayModel::Kind::PerEdgeFixed: k = 0; break;
    case DelayModel::Kind::Uniform: break;
    }
    std::uint64_t h = splitmix64(m.seed ^ splitmix64((std::uint64_t(from) << 32) | to) ^
                                 splitmix64(k + 0x517cc1b727220a95ull));
    double u = (static_cast<double>(h >> 11) + 1.0) / 9007199254740992.0; // (0, 1]
    double lo = m.min_frac * m.tau_max;
    return lo + (m.tau_max - lo) * u;
}

struct Event {
    double time = 0.0;
    GnomeId sender = 0;
    GnomeId target = 0;
    std::uint64_t pid = no_pid;
    Awareness alpha;
    std::uint64_t seq = 0;
};

struct EventOrder {
    bool desc = false;
    bool operator()(const Event& a, const Event& b) const {
        if (a.time != b.time) return a.time > b.time; // min-heap
        if (a.sender != b.sender) return desc ? a.sender < b.sender : a.sender > b.sender;
        return a.seq > b.seq;
    }
};

struct Node {
    std::vector<ActiveEntry> active;          // own alpha per pid
    bool confused = false;
    std::vector<std::vector<ActiveEntry>> reg; // per neighbor slot (+1 self), per pid
    std::vector<std::uint64_t> edge_seq;       // messages sent per neighbor slot

    Awareness own(std::uint64_t pid) const {
        for (auto& e : active)
            if (e.pid == pid) return e.alpha;
        return Awareness::unaware();
    }
    void set_own(std::uint64_t pid, Awareness a) {
        for (auto& e : active)
            if (e.pid == pid) {
                e.alpha = a;
                return;
            }
        active.push_back({pid, a});
    }
};

Awareness reg_get(const std::vector<ActiveEntry>& r, std::uint64_t pid) {
    for (auto& e : r)
        if (e.pid == pid) return e.alpha;
    return Awareness::unaware();
}

void reg_latch(std::vector<ActiveEntry>& r, std::uint64_t pid, Awareness a) {
    for (auto& e : r) {
        if (e.pid == pid) {
            if (e.alpha.is_confused()) return;            // confusion sticks
            if (a.is_confused() || a > e.alpha) e.alpha = a; // stale values lose
            return;
        }
    }
    r.push_back({pid, a});
}

} // namespace

Awareness AsyncTrace::alpha_at(GnomeId g, double tau) const {
    const auto& ev = per_gnome.at(g);
    Awareness a = Awareness::unaware();
    for (const auto& e : ev) {
        if (e.tau <= tau) a = e.alpha;
        else break;
    }
    return a;
}

AsyncTrace run_async(const Topology& topo, GnomeId proposer, const DelayModel& delay,
                     double duration, const AsyncOptions& opts) {
    const std::uint32_t n = topo.size();
    if (proposer >= n) throw ScenarioError("proposer out of range");
    if (delay.tau_max <= 0) throw ScenarioError("tau_max must be positive");
    if (delay.min_frac < 0 || delay.min_frac >= 1)
        throw ScenarioError("min_frac must be in [0, 1)");
    const int d = opts.d >= 0 ? opts.d : topo.d_bound();

    for (const auto& j : opts.jokers) {
        if (j.joker >= n) throw ScenarioError("joker out of range");
        if (j.strategy == JokerStrategy::Trick || j.strategy == JokerStrategy::AnnounceSeq)
            throw ScenarioError("strategy " + to_string(j.strategy) +
                                " is supported by the sync engine only");
    }

    AsyncTrace trace;
    trace.n = n;
    trace.d = d;
    trace.tau_max = delay.tau_max;
    trace.duration = duration;
    trace.per_gnome.resize(n);

    std::vector<Node> nodes(n);
    for (std::uint32_t g = 0; g < n; ++g) {
        nodes[g].reg.resize(topo.degree(g) + 1); // slot degree(g) = self
        nodes[g].edge_seq.assign(topo.degree(g) + 1, 0);
    }

    std::priority_queue<Event, std::vector<Event>, EventOrder> queue(EventOrder{opts.tie_desc});
    std::uint64_t seq = 0;
    std::uint64_t processed = 0;
    std::uint32_t reached = 0; // gnomes at alpha >= d

    auto record = [&](double tau, GnomeId g, Awareness a) {
        trace.events.push_back({tau, g, a});
        trace.per_gnome[g].push_back({tau, g, a});
    };

    auto broadcast = [&](double now, GnomeId g, std::uint64_t pid, Awareness a) {
        auto nbs = topo.neighbors(g);
        for (std::size_t i = 0; i < nbs.size(); ++i) {
            double dt = sample_delay(delay, g, nbs[i], nodes[g].edge_seq[i]);
            nodes[g].edge_seq[i]++;
            queue.push(Event{now + dt, g, nbs[i], pid, a, seq++});
        }
        // self-delivery: his own announce is part of N(g)'s chatter
        double dt = sample_delay(delay, g, g, nodes[g].edge_seq[nbs.size()]);
        nodes[g].edge_seq[nbs.size()]++;
        queue.push(Event{now + dt, g, g, pid, a, seq++});
        trace.messages_total += nbs.size();
    };

    auto slot_of = [&](GnomeId g, GnomeId from) -> std::size_t {
        auto nbs = topo.neighbors(g);
        if (from == g) return nbs.size();
        auto it = std::lower_bound(nbs.begin(), nbs.end(), from);
        return static_cast<std::size_t>(it - nbs.begin());
    };

    auto is_joker = [&](GnomeId g) {
        for (const auto& j : opts.jokers)
            if (j.joker == g) return true;
        return false;
    };

    // Recompute g's awareness from registers; emit changes and announces.
    auto recompute = [&](double now, GnomeId g) {
        Node& nd = nodes[g];
        if (nd.confused) return;
        bool joker_here = is_joker(g);

        auto go_confused = [&] {
            nd.confused = true;
            record(now, g, Awareness::confused());
            broadcast(now, g, confusion_pid, Awareness::confused());
        };

        if (!joker_here) {
            // relayed confusion absorbs regardless of what is known locally
            for (auto& r : nd.reg)
                if (reg_get(r, confusion_pid).is_confused()) {
                    go_confused();
                    return;
                }
            // two distinct real pids anywhere -> contradiction
            std::uint64_t known = no_pid;
            bool conflict = false;
            auto scan_pid = [&](std::uint64_t pid) {
                if (pid == no_pid || pid == confusion_pid) return;
                if (known == no_pid) known = pid;
                else if (known != pid) conflict = true;
            };
            for (auto& e : nd.active) scan_pid(e.pid);
            for (auto& r : nd.reg)
                for (auto& e : r) scan_pid(e.pid);
            if (conflict) {
                go_confused();
                return;
            }
        }

        std::vector<std::uint64_t> pids;
        for (auto& e : nd.active) pids.push_back(e.pid);
        for (auto& r : nd.reg)
            for (auto& e : r)
                if (e.pid != confusion_pid &&
                    std::find(pids.begin(), pids.end(), e.pid) == pids.end())
                    pids.push_back(e.pid);

        for (std::uint64_t pid : pids) {
            Awareness own = nd.own(pid);
            std::vector<Awareness> heard;
            heard.reserve(nd.reg.size());
            for (auto& r : nd.reg) heard.push_back(reg_get(r, pid));
            Awareness next = alpha_step(own, heard);
            if (next > own) {
                bool was_reached = own.is_radius() && own.value() >= d;
                nd.set_own(pid, next);
                record(now, g, next);
                if (!was_reached && next.value() >= d) {
                    ++reached;
                    if (reached == n && !trace.consensus_time) trace.consensus_time = now;
                }
                if (next.value() < d) broadcast(now, g, pid, next);
            }
        }
    };

    // proposer starts the round at tau = 0
    nodes[proposer].set_own(1, Awareness::radius(0));
    record(0.0, proposer, Awareness::radius(0));
    if (d == 0) {
        ++reached;
        if (reached == n) trace.consensus_time = 0.0;
    } else {
        broadcast(0.0, proposer, 1, Awareness::radius(0));
    }

    // scripted injections enter the event queue so all state changes flow
    // through the same time-ordered path
    std::uint64_t next_pid = 2;
    for (const auto& j : opts.jokers) {
        double at = j.inject_at_time >= 0 ? j.inject_at_time
                                          : static_cast<double>(j.inject_at) * delay.tau_max;
        if (j.strategy == JokerStrategy::Fool) {
            auto nbs = topo.neighbors(j.joker);
            for (GnomeId h : nbs) {
                double dt = sample_delay(delay, j.joker, h, 1ull << 60);
                queue.push(Event{at + dt, j.joker, h, confusion_pid, Awareness::confused(), seq++});
            }
            trace.messages_total += nbs.size();
        } else {
            // confuse/backdate: the bogus proposal pops into the joker's own
            // state at `at` and spreads from there
            queue.push(Event{at, j.joker, j.joker, next_pid++, Awareness::radius(0), seq++});
        }
    }

    // main loop: batch events sharing one timestamp, apply registers, then
    // recompute each touched gnome once
    std::vector<Event> batch;
    std::vector<GnomeId> touched;
    while (!queue.empty()) {
        double now = queue.top().time;
        if (now > duration) break;
        batch.clear();
        touched.clear();
        while (!queue.empty() && queue.top().time == now) {
            batch.push_back(queue.top());
            queue.pop();
        }
        processed += batch.size();
        if (processed > opts.event_cap)
            throw ScenarioError("async event cap exceeded (" + std::to_string(opts.event_cap) + ")");
        for (const Event& e : batch) {
            Node& nd = nodes[e.target];
            reg_latch(nd.reg[slot_of(e.target, e.sender)], e.pid, e.alpha);
            if (std::find(touched.begin(), touched.end(), e.target) == touched.end())
                touched.push_back(e.target);
        }
        if (opts.tie_desc) std::sort(touched.rbegin(), touched.rend());
        else std::sort(touched.begin(), touched.end());
        for (GnomeId g : touched) recompute(now, g);
    }

    std::sort(trace.events.begin(), trace.events.end(), [](const auto& a, const auto& b) {
        return a.tau != b.tau ? a.tau < b.tau : a.gnome < b.gnome;
    });
    return trace;
}

std::int64_t bottom_time(const AsyncTrace& trace, double tau) {
    if (tau < 0 || tau > trace.duration) throw std::out_of_range("tau outside run duration");
    std::int64_t lowest = std::numeric_limits<std::int64_t>::max();
    for (std::uint32_t g = 0; g < trace.n; ++g) {
        Awareness a = trace.alpha_at(g, tau);
        if (a.is_confused()) return std::numeric_limits<std::int64_t>::min();
        lowest = std::min<std::int64_t>(lowest, a.as_int());
    }
    return lowest;
}

std::optional<int> phase_at(const AsyncTrace& trace, GnomeId g, double tau) {
    return phase_of(trace.alpha_at(g, tau), trace.d);
}

} // namespace gnomes
