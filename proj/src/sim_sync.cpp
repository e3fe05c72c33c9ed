#include "gnomes/sim_sync.hpp"

#include <algorithm>
#include <cassert>
#include <deque>
#include <limits>
#include <map>
#include <numeric>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gnomes {

std::string to_string(Outcome o) {
    switch (o) {
    case Outcome::Consensus: return "consensus";
    case Outcome::Confused: return "confused";
    case Outcome::Timeout: return "timeout";
    }
    return "?";
}

JokerStrategy joker_strategy_from_string(const std::string& s) {
    if (s == "confuse") return JokerStrategy::Confuse;
    if (s == "fool") return JokerStrategy::Fool;
    if (s == "trick") return JokerStrategy::Trick;
    if (s == "backdate") return JokerStrategy::Backdate;
    if (s == "announce-seq") return JokerStrategy::AnnounceSeq;
    throw std::invalid_argument("unknown joker strategy: " + s);
}

std::string to_string(JokerStrategy s) {
    switch (s) {
    case JokerStrategy::Confuse: return "confuse";
    case JokerStrategy::Fool: return "fool";
    case JokerStrategy::Trick: return "trick";
    case JokerStrategy::Backdate: return "backdate";
    case JokerStrategy::AnnounceSeq: return "announce-seq";
    }
    return "?";
}

SanityMode sanity_mode_from_string(const std::string& s) {
    if (s == "off") return SanityMode::Off;
    if (s == "log") return SanityMode::Log;
    if (s == "expel") return SanityMode::Expel;
    throw std::invalid_argument("unknown sanity mode: " + s);
}

std::string to_string(SanityMode m) {
    switch (m) {
    case SanityMode::Off: return "off";
    case SanityMode::Log: return "log";
    case SanityMode::Expel: return "expel";
    }
    return "?";
}

namespace {

// Histogram bucket layout: [confused, unaware, radius 0 .. d-1, >= d].
inline std::size_t bucket_of(Awareness a, int d) {
    if (a.is_confused()) return 0;
    if (a.is_unaware()) return 1;
    return a.value() >= d ? static_cast<std::size_t>(d) + 2 : static_cast<std::size_t>(a.value()) + 2;
}

inline std::size_t bucket_count(int d) { return static_cast<std::size_t>(d) + 3; }

} // namespace

std::vector<Awareness> oracle_alpha(const Topology& topo, GnomeId proposer, std::int64_t t) {
    const std::uint32_t n = topo.size();
    std::vector<std::int64_t> cur(n, -1), nxt(n, -1);
    cur[proposer] = 0;
    for (std::int64_t step = 0; step < t; ++step) {
        for (std::uint32_t g = 0; g < n; ++g) {
            std::int64_t lowest = cur[g];
            bool any_aware = cur[g] >= 0;
            for (GnomeId h : topo.neighbors(g)) {
                lowest = std::min(lowest, cur[h]);
                any_aware = any_aware || cur[h] >= 0;
            }
            nxt[g] = any_aware ? lowest + 1 : -1;
        }
        cur.swap(nxt);
    }
    std::vector<Awareness> out(n);
    for (std::uint32_t g = 0; g < n; ++g)
        out[g] = cur[g] < 0 ? Awareness::unaware() : Awareness::radius(static_cast<std::int32_t>(cur[g]));
    return out;
}

// ---- fault-free fast path ---------------------------------------------------

TurnTrace run_kernel(const Topology& topo, GnomeId proposer, int d, std::int64_t max_turns,
                     bool record_alpha, bool parallel, const TraceSink* sink) {
    const std::uint32_t n = topo.size();
    if (proposer >= n) throw ScenarioError("proposer out of range");
    if (d < 0) throw ScenarioError("negative consensus threshold");
    if (max_turns < 0) max_turns = 6 * static_cast<std::int64_t>(std::max(d, 1)) + 16;

    std::vector<std::int32_t> cur(n, -1), nxt(n, -1);
    cur[proposer] = 0;

    TurnTrace trace;
    trace.n = n;
    trace.d = d;
    trace.mode = Mode::Plain;
    trace.rounds.push_back(RoundInfo{0, 1, 0, std::nullopt, -1, false, false, 0});
    RoundInfo& round = trace.rounds.back();

    const std::size_t buckets = bucket_count(d);
    std::int64_t t = 0;
    bool frozen = false; // consensus reached: rounds are over, state holds

    while (true) {
        // stats over the state at turn t
        std::vector<std::int64_t> hist(buckets, 0);
        std::int32_t bmin = std::numeric_limits<std::int32_t>::max();
        std::int32_t bmax = std::numeric_limits<std::int32_t>::min();
        std::int64_t bcount = 0, msgs = 0;

#ifdef _OPENMP
#pragma omp parallel if (parallel && n > 2048)
        {
            std::vector<std::int64_t> h(buckets, 0);
            std::int32_t lmin = std::numeric_limits<std::int32_t>::max();
            std::int32_t lmax = std::numeric_limits<std::int32_t>::min();
            std::int64_t lcount = 0, lmsgs = 0;
#pragma omp for schedule(static) nowait
            for (std::int64_t gi = 0; gi < static_cast<std::int64_t>(n); ++gi) {
                const auto g = static_cast<std::uint32_t>(gi);
                std::int32_t a = cur[g];
                std::size_t b = a < 0 ? 1 : (a >= d ? buckets - 1 : static_cast<std::size_t>(a) + 2);
                h[b]++;
                if (a < lmin) { lmin = a; lcount = 1; }
                else if (a == lmin) { lcount++; }
                lmax = std::max(lmax, a);
                if (a >= 0 && a < d) lmsgs += static_cast<std::int64_t>(topo.degree(g));
            }
#pragma omp critical
            {
                for (std::size_t b = 0; b < buckets; ++b) hist[b] += h[b];
                if (lmin < bmin) { bmin = lmin; bcount = lcount; }
                else if (lmin == bmin) { bcount += lcount; }
                bmax = std::max(bmax, lmax);
                msgs += lmsgs;
            }
        }
#else
        (void)parallel;
        for (std::uint32_t g = 0; g < n; ++g) {
            std::int32_t a = cur[g];
            hist[a < 0 ? 1 : (a >= d ? buckets - 1 : static_cast<std::size_t>(a) + 2)]++;
            if (a < bmin) { bmin = a; bcount = 1; }
            else if (a == bmin) { bcount++; }
            bmax = std::max(bmax, a);
            if (a >= 0 && a < d) msgs += static_cast<std::int64_t>(topo.degree(g));
        }
#endif

        TurnRecord row;
        row.turn = t;
        row.hist = std::move(hist);
        row.bottom_value = bmin;
        row.bottom_count = bcount;
        row.messages = msgs;
        row.members = n;
        if (record_alpha) {
            row.alpha.resize(n);
            for (std::uint32_t g = 0; g < n; ++g)
                row.alpha[g] = cur[g] < 0 ? Awareness::unaware() : Awareness::radius(cur[g]);
        }
        trace.messages_total += static_cast<std::uint64_t>(msgs);
        trace.max_spread = std::max(trace.max_spread, static_cast<int>(bmax - bmin));
        if (sink) (*sink)(row);
        trace.turns.push_back(std::move(row));

        bool any_reached = bmax >= d;
        bool all_reached = bmin >= d;
        if (any_reached && round.first_reach_turn < 0) round.first_reach_turn = t;
        if (all_reached && !round.consensus_turn) {
            round.consensus_turn = t;
            round.simultaneous = (round.first_reach_turn == t);
            round.acted_count = n;
        }

        if (round.consensus_turn) {
            if (frozen) break; // confirmation row emitted
            frozen = true;
        }
        if (t >= max_turns) break;

        if (!frozen) {
            // step: own state is always in the min; neighbors contribute their
            // announced value, and gnomes announce only while 0 <= alpha < d.
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (parallel && n > 2048)
#endif
            for (std::int64_t gi = 0; gi < static_cast<std::int64_t>(n); ++gi) {
                const auto g = static_cast<std::uint32_t>(gi);
                std::int32_t own = cur[g];
                std::int32_t lowest = own;
                bool any = own >= 0;
                for (GnomeId h : topo.neighbors(g)) {
                    std::int32_t v = cur[h];
                    if (v >= 0 && v < d) {
                        lowest = std::min(lowest, v);
                        any = true;
                    } else {
                        lowest = std::min(lowest, std::int32_t{-1});
                    }
                }
                nxt[g] = any ? std::max(own, lowest + 1) : own;
            }
            cur.swap(nxt);
        }
        ++t;
    }

    trace.consensus_turn = round.consensus_turn;
    trace.simultaneous = round.simultaneous;
    if (round.consensus_turn) {
        trace.outcome = Outcome::Consensus;
        for (std::uint32_t g = 0; g < n; ++g)
            trace.acted.push_back({g, round.pid, *round.consensus_turn});
    } else {
        trace.outcome = Outcome::Timeout;
    }
    return trace;
}

// ---- full engine ------------------------------------------------------------

namespace {

struct NeighborView {
    GnomeId id = 0;
    bool expelled = false;
    bool any = false; // something heard before
    std::uint64_t last_pid = no_pid;
    Awareness last_alpha = Awareness::unaware();
    std::int64_t last_turn = -1;
    std::int64_t last_change_turn = -1;
    std::int32_t last_round = -1;
};

struct SentEntry {
    std::uint64_t pid = no_pid;
    Awareness alpha = Awareness::unaware();
    Awareness prev_alpha = Awareness::unaware();
    std::int64_t turn = -1;
    std::int64_t first_turn = -1;
};

struct RichGnome {
    GnomeState st;
    bool present = true;   // physically attached to the swarm
    bool member = true;    // participates in the protocol (not pending)
    std::int32_t join_round = -1;
    bool completed = false;
    std::int64_t acted_turn = -1;
    std::int32_t acted_round = -1;
    std::uint64_t acted_pid_ = no_pid;
    std::int64_t reset_at = -1;
    std::vector<SentEntry> sent;      // per-pid last broadcast this round
    std::int64_t sent_confused_turn = -1;
    std::vector<std::uint64_t> dropped;   // rank-lost or expelled pids this round
    std::vector<std::uint64_t> seen;      // pids already backdate-checked
    bool stale_mark = false;
    std::optional<Announce> stale_echo;   // relay of an accepted stale claim
    std::vector<NeighborView> views;

    bool dropped_pid(std::uint64_t pid) const {
        return std::find(dropped.begin(), dropped.end(), pid) != dropped.end();
    }
    SentEntry* find_sent(std::uint64_t pid) {
        for (auto& s : sent)
            if (s.pid == pid) return &s;
        return nullptr;
    }
    NeighborView* find_view(GnomeId n) {
        for (auto& v : views)
            if (v.id == n) return &v;
        return nullptr;
    }
    void new_round_cleanup() {
        sent.clear();
        sent_confused_turn = -1;
        dropped.clear();
        seen.clear();
        completed = false;
        acted_turn = -1;
        acted_pid_ = no_pid;
        acted_round = -1;
        reset_at = -1;
    }
};

} // namespace

struct SyncEngine::Impl {
    Scenario sc;
    int d;
    std::int64_t timeout;
    std::int64_t max_turns;
    std::uint32_t node_count;

    std::vector<std::vector<GnomeId>> adj; // mutable under churn
    std::vector<RichGnome> gn;
    std::vector<Proposal> registry; // pid i stored at registry[i-1]
    std::uint64_t next_pid = 1;

    std::deque<ProposerSpec> pending_proposals; // sorted by turn
    std::vector<JokerScript> jokers;
    std::vector<std::uint64_t> joker_pids; // bogus pid per joker, once minted
    std::deque<ChurnEvent> churn;
    bool retry_fired = false;
    std::optional<std::int64_t> retry_at;

    std::vector<std::vector<Announce>> outbox; // per gnome, announces made this turn

    TurnTrace trace;
    TraceSink sink;
    std::int64_t t = 0;
    bool settle_done = false;
    bool finished = false;

    explicit Impl(Scenario scenario) : sc(std::move(scenario)) {
        d = sc.threshold();
        timeout = sc.timeout_turns();
        node_count = sc.topology.size();

        if (sc.proposers.empty()) throw ScenarioError("scenario has no proposer");
        for (auto& p : sc.proposers)
            if (p.gnome >= node_count) throw ScenarioError("proposer out of range");
        for (auto& j : sc.jokers)
            if (j.joker >= node_count) throw ScenarioError("joker out of range");
        if (!sc.ranks.empty() && sc.ranks.size() != node_count)
            throw ScenarioError("ranks must cover every gnome");

        adj.resize(node_count);
        for (std::uint32_t g = 0; g < node_count; ++g) {
            auto nb = sc.topology.neighbors(g);
            adj[g].assign(nb.begin(), nb.end());
        }
        gn.resize(node_count);
        for (std::uint32_t g = 0; g < node_count; ++g) {
            gn[g].st.me = g;
            rebuild_views(g);
        }

        std::int64_t last_event = 0;
        for (auto& p : sc.proposers) {
            pending_proposals.push_back(p);
            last_event = std::max(last_event, p.turn);
        }
        std::sort(pending_proposals.begin(), pending_proposals.end(),
                  [](const ProposerSpec& a, const ProposerSpec& b) { return a.turn < b.turn; });
        jokers = sc.jokers;
        joker_pids.assign(jokers.size(), no_pid);
        for (auto& j : jokers) last_event = std::max(last_event, j.inject_at);
        for (auto& c : sc.churn) {
            churn.push_back(c);
            last_event = std::max(last_event, c.turn);
        }
        std::sort(churn.begin(), churn.end(),
                  [](const ChurnEvent& a, const ChurnEvent& b) { return a.turn < b.turn; });

        max_turns = sc.max_turns >= 0
                        ? sc.max_turns
                        : last_event + 6 * std::max<std::int64_t>(d, 1) + 16 +
                              (sc.retry.kind != RetryPolicy::Kind::None ? timeout + 2 : 0) +
                              (jokers.empty() ? 0 : timeout + 2);
        if (sc.retry.kind == RetryPolicy::Kind::AtTurn) retry_at = sc.retry.turn;

        outbox.resize(node_count);
        trace.n = node_count;
        trace.d = d;
        trace.mode = sc.mode;
    }

    void rebuild_views(GnomeId g) {
        auto& views = gn[g].views;
        std::vector<NeighborView> fresh;
        fresh.reserve(adj[g].size());
        for (GnomeId h : adj[g]) {
            if (NeighborView* old = gn[g].find_view(h)) {
                fresh.push_back(*old);
            } else {
                NeighborView v;
                v.id = h;
                fresh.push_back(v);
            }
        }
        views = std::move(fresh);
    }

    const Proposal& prop(std::uint64_t pid) const {
        if (pid == 0 || pid > registry.size()) throw std::out_of_range("unknown pid");
        return registry[pid - 1];
    }

    std::int64_t rank_of(GnomeId g) const {
        return sc.ranks.empty() ? static_cast<std::int64_t>(g) : sc.ranks[g];
    }

    std::uint64_t register_proposal(GnomeId proposer, std::int64_t nominal, std::string payload) {
        registry.push_back(Proposal{next_pid, proposer, nominal, rank_of(proposer), std::move(payload)});
        return next_pid++;
    }

    // ---- membership / churn --------------------------------------------

    bool validate_members(bool include_pending, std::string& why) const {
        std::vector<GnomeId> nodes;
        for (std::uint32_t g = 0; g < node_count; ++g)
            if (gn[g].present && (include_pending || gn[g].member)) nodes.push_back(g);
        if (nodes.empty()) {
            why = "no members remain";
            return false;
        }
        auto in_set = [&](GnomeId g) {
            return gn[g].present && (include_pending || gn[g].member);
        };
        // BFS from nodes[0] over the member subgraph, tracking eccentricity.
        std::vector<std::int32_t> dist(node_count, -1);
        std::vector<GnomeId> q{nodes[0]};
        dist[nodes[0]] = 0;
        std::size_t seen_count = 1;
        for (std::size_t head = 0; head < q.size(); ++head) {
            GnomeId u = q[head];
            for (GnomeId v : adj[u])
                if (in_set(v) && dist[v] < 0) {
                    dist[v] = dist[u] + 1;
                    q.push_back(v);
                    ++seen_count;
                }
        }
        if (seen_count != nodes.size()) {
            why = "churn disconnected the swarm";
            return false;
        }
        // exact diameter over the subgraph (churn scenarios are small)
        int best = 0;
        for (GnomeId s : nodes) {
            std::fill(dist.begin(), dist.end(), -1);
            q.assign(1, s);
            dist[s] = 0;
            for (std::size_t head = 0; head < q.size(); ++head) {
                GnomeId u = q[head];
                for (GnomeId v : adj[u])
                    if (in_set(v) && dist[v] < 0) {
                        dist[v] = dist[u] + 1;
                        best = std::max(best, dist[v]);
                        q.push_back(v);
                    }
            }
        }
        if (best > sc.topology.d_bound()) {
            why = "churn raised the diameter to " + std::to_string(best) + " > bound " +
                  std::to_string(sc.topology.d_bound());
            return false;
        }
        return true;
    }

    void apply_churn_events() {
        while (!churn.empty() && churn.front().turn <= t) {
            ChurnEvent ev = churn.front();
            churn.pop_front();
            if (ev.action == ChurnAction::Leave) {
                if (ev.gnome >= node_count || !gn[ev.gnome].present)
                    throw ScenarioError("churn: leave of absent gnome " + std::to_string(ev.gnome));
                gn[ev.gnome].present = false;
                gn[ev.gnome].member = false;
            } else {
                GnomeId id = ev.gnome;
                if (ev.neighbors.empty()) throw ScenarioError("churn: join without neighbors");
                for (GnomeId h : ev.neighbors)
                    if (h >= node_count || !gn[h].present || !gn[h].member)
                        throw ScenarioError("churn: join neighbor not an active member");
                if (id == node_count) {
                    // brand-new gnome
                    adj.emplace_back();
                    gn.emplace_back();
                    outbox.emplace_back();
                    node_count++;
                    gn[id].st.me = id;
                } else if (id < node_count && !gn[id].present) {
                    adj[id].clear(); // rejoining somewhere else
                } else {
                    throw ScenarioError("churn: join of a present gnome " + std::to_string(id));
                }
                for (GnomeId h : ev.neighbors) {
                    adj[id].push_back(h);
                    adj[h].push_back(id);
                    std::sort(adj[h].begin(), adj[h].end());
                    rebuild_views(h);
                }
                std::sort(adj[id].begin(), adj[id].end());
                gn[id].present = true;
                gn[id].member = false; // pending until the next round starts
                gn[id].st = GnomeState{};
                gn[id].st.me = id;
                gn[id].new_round_cleanup();
                gn[id].join_round = open_round_index();
                gn[id].views.clear();
                rebuild_views(id);
            }
            std::string why;
            if (!validate_members(true, why) || !validate_members(false, why))
                throw ScenarioError("churn event at turn " + std::to_string(ev.turn) + " rejected: " + why);
        }
    }

    std::int32_t open_round_index() const {
        for (auto it = trace.rounds.rbegin(); it != trace.rounds.rend(); ++it)
            if (!it->consensus_turn && !it->confused) return it->round;
        return -1;
    }

    RoundInfo& round_info(std::int32_t r, std::int64_t start) {
        for (auto& ri : trace.rounds)
            if (ri.round == r) return ri;
        trace.rounds.push_back(RoundInfo{r, no_pid, start, std::nullopt, -1, false, false, 0});
        return trace.rounds.back();
    }

    // ---- proposals -------------------------------------------------------

    void apply_proposals() {
        std::deque<ProposerSpec> defer;
        while (!pending_proposals.empty() && pending_proposals.front().turn <= t) {
            ProposerSpec ps = pending_proposals.front();
            pending_proposals.pop_front();
            RichGnome& g = gn[ps.gnome];
            bool can = g.present && g.member && !g.st.confused && !g.completed &&
                       g.st.active.empty();
            if (!can) {
                ps.turn = t + 1; // rule-4 self-guard: wait until proposable
                defer.push_back(ps);
                continue;
            }
            std::uint64_t pid = register_proposal(ps.gnome, g.st.swarm_clock, ps.payload);
            Announce ann = propose(g.st, prop(pid), t);
            (void)ann; // broadcast happens via the regular outbox path
            RoundInfo& ri = round_info(g.st.round, t);
            if (ri.pid == no_pid) ri.pid = pid;
        }
        for (auto& p : defer) pending_proposals.push_front(p);
        std::sort(pending_proposals.begin(), pending_proposals.end(),
                  [](const ProposerSpec& a, const ProposerSpec& b) { return a.turn < b.turn; });
    }

    // ---- joker behavior --------------------------------------------------

    void apply_joker_injections() {
        for (auto& j : jokers) {
            if (j.inject_at != t) continue;
            RichGnome& g = gn[j.joker];
            if (!g.present) continue;
            switch (j.strategy) {
            case JokerStrategy::Confuse:
            case JokerStrategy::Backdate: {
                std::int64_t offset = j.strategy == JokerStrategy::Backdate ? j.backdate_offset : 0;
                std::uint64_t pid = register_proposal(j.joker, g.st.swarm_clock - offset, j.payload);
                // the joker abandons whatever it was relaying
                for (auto& e : g.st.active) g.dropped.push_back(e.pid);
                g.st.active.clear();
                g.st.confused = false;
                g.st.set_alpha(pid, Awareness::radius(0));
                break;
            }
            case JokerStrategy::Fool:
            case JokerStrategy::Trick:
            case JokerStrategy::AnnounceSeq:
                break; // handled in outbox override
            }
        }
    }

    // The joker's wire behavior replaces its honest outbox from inject_at on.
    bool joker_outbox_override(GnomeId id, std::vector<Announce>& out) {
        for (std::size_t ji = 0; ji < jokers.size(); ++ji) {
            JokerScript& j = jokers[ji];
            if (j.joker != id) continue;
            switch (j.strategy) {
            case JokerStrategy::Fool:
                if (t >= j.inject_at && t < j.inject_at + timeout) {
                    out.clear();
                    out.push_back(Announce{id, confusion_pid, Awareness::confused(), t,
                                           gn[id].st.round});
                    return true;
                }
                break;
            case JokerStrategy::Trick:
                if (t >= j.inject_at && t < j.inject_at + d) {
                    if (joker_pids[ji] == no_pid)
                        joker_pids[ji] = register_proposal(id, gn[id].st.swarm_clock, j.payload);
                    std::int32_t stale_round = std::max(gn[id].st.round - 1, 0);
                    out.clear();
                    out.push_back(Announce{id, joker_pids[ji], Awareness::radius(0), t, stale_round});
                    return true;
                }
                break;
            case JokerStrategy::AnnounceSeq: {
                std::int64_t idx = t - j.inject_at;
                if (idx >= 0 && idx < static_cast<std::int64_t>(j.announces.size())) {
                    Announce a = j.announces[static_cast<std::size_t>(idx)];
                    a.sender = id;
                    a.turn = t;
                    out.clear();
                    out.push_back(a);
                    return true;
                }
                break;
            }
            default:
                break;
            }
        }
        return false;
    }

    // ---- per-turn flow ---------------------------------------------------

    void build_outbox() {
        for (std::uint32_t g = 0; g < node_count; ++g) {
            auto& out = outbox[g];
            out.clear();
            RichGnome& rg = gn[g];
            if (!rg.present || !rg.member) continue;
            if (joker_outbox_override(g, out)) {
                note_sent(rg, out);
                continue;
            }
            if (rg.completed) continue;
            if (rg.st.confused) {
                out.push_back(Announce{g, confusion_pid, Awareness::confused(), t, rg.st.round});
            } else {
                for (auto& e : rg.st.active) {
                    if (e.alpha.is_radius() && e.alpha.value() < d)
                        out.push_back(Announce{g, e.pid, e.alpha, t, rg.st.round});
                }
            }
            if (rg.stale_echo) {
                Announce a = *rg.stale_echo;
                a.sender = g;
                a.turn = t;
                out.push_back(a);
                rg.stale_echo.reset();
            }
            note_sent(rg, out);
        }
    }

    void note_sent(RichGnome& rg, const std::vector<Announce>& out) {
        for (const Announce& a : out) {
            if (a.pid == confusion_pid || a.alpha.is_confused()) {
                if (rg.sent_confused_turn < 0) rg.sent_confused_turn = t;
                continue;
            }
            if (SentEntry* s = rg.find_sent(a.pid)) {
                if (s->turn != t) {
                    s->prev_alpha = s->alpha;
                    s->alpha = a.alpha;
                    s->turn = t;
                }
            } else {
                rg.sent.push_back(SentEntry{a.pid, a.alpha, Awareness::unaware(), t, t});
            }
        }
    }

    Awareness display_alpha(const RichGnome& rg) const {
        if (!rg.present || !rg.member) return Awareness::unaware();
        if (rg.st.confused) return Awareness::confused();
        Awareness best = Awareness::unaware();
        for (auto& e : rg.st.active) best = std::max(best, e.alpha);
        return best;
    }

    void record_row() {
        const std::size_t buckets = bucket_count(d);
        TurnRecord row;
        row.turn = t;
        row.hist.assign(buckets, 0);
        bool bottom_confused = false;
        std::int64_t bmin = std::numeric_limits<std::int64_t>::max();
        std::int64_t bmax = std::numeric_limits<std::int64_t>::min();
        std::int64_t bcount = 0, members = 0, msgs = 0;
        int spread_min = std::numeric_limits<int>::max(), spread_max = std::numeric_limits<int>::min();

        if (sc.record_alpha) row.alpha.assign(node_count, Awareness::unaware());
        for (std::uint32_t g = 0; g < node_count; ++g) {
            RichGnome& rg = gn[g];
            if (!rg.present || !rg.member) continue;
            ++members;
            Awareness a = display_alpha(rg);
            if (sc.record_alpha) row.alpha[g] = a;
            row.hist[bucket_of(a, d)]++;
            if (a.is_confused()) {
                bottom_confused = true;
            } else {
                std::int64_t v = a.as_int();
                if (v < bmin) { bmin = v; bcount = 1; }
                else if (v == bmin) { bcount++; }
                bmax = std::max(bmax, v);
                spread_min = std::min(spread_min, static_cast<int>(v));
                spread_max = std::max(spread_max, static_cast<int>(v));
            }
            if (!outbox[g].empty()) msgs += static_cast<std::int64_t>(live_degree(g));
        }
        if (bottom_confused) {
            row.bottom_confused = true;
            bcount = 0;
            for (std::uint32_t g = 0; g < node_count; ++g)
                if (gn[g].present && gn[g].member && gn[g].st.confused) ++bcount;
        }
        row.bottom_value = bottom_confused ? 0 : (members ? bmin : -1);
        row.bottom_count = bcount;
        row.messages = msgs;
        row.members = members;
        trace.messages_total += static_cast<std::uint64_t>(msgs);
        if (spread_max >= spread_min && spread_max != std::numeric_limits<int>::min())
            trace.max_spread = std::max(trace.max_spread, spread_max - spread_min);
        if (sink) sink(row);
        trace.turns.push_back(std::move(row));
    }

    std::size_t live_degree(GnomeId g) const {
        std::size_t deg = 0;
        for (GnomeId h : adj[g])
            if (gn[h].present && gn[h].member) ++deg;
        return deg;
    }

    // consensus / acting detection on the freshly computed state
    void detect_acting() {
        for (std::uint32_t g = 0; g < node_count; ++g) {
            RichGnome& rg = gn[g];
            if (!rg.present || !rg.member || rg.completed || rg.st.confused) continue;
            // candidate pids whose awareness reached the threshold
            std::uint64_t winner = no_pid;
            for (auto& e : rg.st.active) {
                if (!consensus_reached(e.alpha, d)) continue;
                if (sc.mode == Mode::Ranked) {
                    // a proposal must meet its nominal 2d deadline to be acted on
                    if (rg.st.swarm_clock > prop(e.pid).nominal_turn + 2 * d) continue;
                }
                if (winner == no_pid || order_proposals(prop(e.pid), prop(winner)) < 0)
                    winner = e.pid;
            }
            if (winner == no_pid) continue;
            rg.completed = true;
            rg.acted_turn = t;
            rg.acted_round = rg.st.round;
            rg.acted_pid_ = winner;
            rg.reset_at = t + 2;
            trace.acted.push_back({g, winner, t});
            RoundInfo& ri = round_info(rg.st.round, t);
            ri.acted_count++;
        }
    }

    void update_round_status() {
        for (auto& ri : trace.rounds) {
            if (ri.consensus_turn || ri.confused) continue;
            bool all = true, any_raw = false, all_confused = true, any_member = false;
            for (std::uint32_t g = 0; g < node_count; ++g) {
                RichGnome& rg = gn[g];
                if (!rg.present || !rg.member) continue;
                any_member = true;
                bool acted_here = rg.completed && rg.acted_round == ri.round;
                // raw threshold crossing, deadline-failed proposals included
                bool raw = acted_here || (rg.st.round == ri.round && !rg.st.confused &&
                                          consensus_reached(display_alpha(rg), d));
                all &= acted_here;
                any_raw |= raw;
                all_confused &= (rg.st.round == ri.round && rg.st.confused);
            }
            if (!any_member) continue;
            if (any_raw && ri.first_reach_turn < 0) ri.first_reach_turn = t;
            if (all) {
                ri.consensus_turn = t;
                ri.simultaneous = (ri.first_reach_turn == t);
            } else if (all_confused) {
                ri.confused = true;
                schedule_retry(ri);
            }
        }
    }

    void schedule_retry(const RoundInfo& ri) {
        if (sc.retry.kind != RetryPolicy::Kind::Auto || retry_fired) return;
        (void)ri;
        std::int64_t latest_onset = 0;
        for (std::uint32_t g = 0; g < node_count; ++g)
            if (gn[g].present && gn[g].member && gn[g].st.confused)
                latest_onset = std::max(latest_onset, gn[g].st.confused_since);
        std::int64_t when = latest_onset + timeout;
        GnomeId who = sc.retry.gnome >= 0 ? static_cast<GnomeId>(sc.retry.gnome)
                                          : sc.proposers.front().gnome;
        pending_proposals.push_back(ProposerSpec{who, when, sc.proposers.front().payload});
        std::sort(pending_proposals.begin(), pending_proposals.end(),
                  [](const ProposerSpec& a, const ProposerSpec& b) { return a.turn < b.turn; });
        retry_fired = true;
    }

    void start_retry_at_turn() {
        if (sc.retry.kind != RetryPolicy::Kind::AtTurn || retry_fired || t < *retry_at) return;
        GnomeId who = sc.retry.gnome >= 0 ? static_cast<GnomeId>(sc.retry.gnome)
                                          : sc.proposers.front().gnome;
        pending_proposals.push_back(ProposerSpec{who, t, sc.proposers.front().payload});
        retry_fired = true;
    }

    // ---- receive: compute state for turn t+1 -----------------------------

    void receive_step() {
        std::vector<GnomeState> next_st(node_count);
        std::vector<bool> next_conf(node_count, false);
        // Iterate receivers in id order; all reads go to outbox (turn-t data)
        // and current state, so evaluation order cannot leak.
        for (std::uint32_t g = 0; g < node_count; ++g) next_st[g] = gn[g].st;

        for (std::uint32_t g = 0; g < node_count; ++g) {
            RichGnome& rg = gn[g];
            if (!rg.present) continue;

            // ambient clock exchange (free, not counted as messages)
            std::vector<std::int64_t> clocks{rg.st.swarm_clock};
            for (GnomeId h : adj[g])
                if (gn[h].present && gn[h].member) clocks.push_back(gn[h].st.swarm_clock);
            next_st[g].swarm_clock = clock_step(rg.st.swarm_clock, clocks);

            if (!rg.member) continue;     // pending joiners only listen to clocks
            if (rg.completed) continue;   // round over for this gnome

            // gather accepted announces per neighbor
            struct Heard {
                GnomeId n;
                Announce ann;
            };
            std::vector<Heard> accepted;
            for (NeighborView& view : rg.views) {
                GnomeId n = view.id;
                if (!gn[n].present || !gn[n].member) continue;
                for (const Announce& ann : outbox[n]) {
                    if (view.expelled) continue;
                    if (!monitor_and_route(rg, view, ann)) continue;
                    accepted.push_back({n, ann});
                }
            }

            if (rg.st.confused) {
                maybe_clear_confusion(rg, next_st[g]);
                continue;
            }

            // relayed confusion absorbs no matter what is known locally
            if (sc.mode == Mode::Plain && !is_joker(g)) {
                bool heard_confusion = false;
                for (auto& h : accepted)
                    if (h.ann.pid == confusion_pid || h.ann.alpha.is_confused())
                        heard_confusion = true;
                if (heard_confusion) {
                    next_conf[g] = true;
                    continue;
                }
            }

            // new pids, conflicts, rank resolution
            std::vector<std::uint64_t> heard_pids;
            for (auto& h : accepted)
                if (h.ann.pid != confusion_pid && !rg.dropped_pid(h.ann.pid) &&
                    std::find(heard_pids.begin(), heard_pids.end(), h.ann.pid) == heard_pids.end())
                    heard_pids.push_back(h.ann.pid);

            bool became_confused = false;
            for (std::uint64_t pid : heard_pids) {
                if (next_st[g].find_alpha(pid)) continue;
                if (sc.mode == Mode::Ranked && !is_joker(g)) {
                    if (std::find(rg.seen.begin(), rg.seen.end(), pid) == rg.seen.end()) {
                        rg.seen.push_back(pid);
                        if (backdate_check(prop(pid), rg.st.swarm_clock, d) ==
                            BackdateVerdict::ExpelProposer) {
                            rg.dropped.push_back(pid);
                            expel(rg, prop(pid).proposer);
                            continue;
                        }
                    }
                }
                if (sc.mode == Mode::Merry || next_st[g].active.empty()) {
                    next_st[g].set_alpha(pid, Awareness::unaware());
                } else {
                    // conflicting proposal against the active one
                    std::uint64_t mine = next_st[g].active.front().pid;
                    if (is_joker(g)) continue; // jokers ignore conflicts
                    std::uint64_t kept =
                        on_conflict(next_st[g], prop(mine), prop(pid), sc.mode, t + 1);
                    if (kept == no_pid) {
                        became_confused = true;
                        break;
                    }
                    if (kept != mine) rg.dropped.push_back(mine);
                    if (kept != pid) rg.dropped.push_back(pid);
                    if (kept == pid && !next_st[g].find_alpha(pid))
                        next_st[g].set_alpha(pid, Awareness::unaware());
                }
            }
            if (became_confused) {
                next_conf[g] = true;
                continue;
            }

            // awareness recurrence per active pid
            for (auto& entry : next_st[g].active) {
                std::vector<Awareness> heard;
                heard.reserve(rg.views.size() + 1);
                // own state is directly known, not announce-mediated
                Awareness own_entry = rg.st.alpha_of(entry.pid);
                heard.push_back(own_entry);
                for (NeighborView& view : rg.views) {
                    GnomeId n = view.id;
                    if (!gn[n].present || !gn[n].member) continue;
                    Awareness contrib = Awareness::unaware();
                    for (auto& h : accepted)
                        if (h.n == n && h.ann.pid == entry.pid) contrib = h.ann.alpha;
                    heard.push_back(contrib);
                }
                entry.alpha = alpha_step(own_entry, heard);
            }
        }

        for (std::uint32_t g = 0; g < node_count; ++g) {
            gn[g].st = std::move(next_st[g]);
            if (next_conf[g]) gn[g].st.mark_confused(t + 1);
        }
    }

    bool is_joker(GnomeId g) const {
        for (auto& j : jokers)
            if (j.joker == g) return true;
        return false;
    }

    void expel(RichGnome& detector, GnomeId violator) {
        if (NeighborView* v = detector.find_view(violator)) {
            if (!v->expelled) {
                v->expelled = true;
                trace.expulsions.push_back({t, detector.st.me, violator});
            }
        }
    }

    // Sanity monitoring plus round routing. Returns true when the announce
    // should be integrated into the receiver's state.
    bool monitor_and_route(RichGnome& rg, NeighborView& view, const Announce& ann) {
        // stale rounds: trick/fool bookkeeping against a completed round
        if (ann.round < rg.st.round ||
            (rg.completed && ann.round == rg.acted_round &&
             (ann.alpha.is_confused() || ann.pid != rg.acted_pid_))) {
            handle_stale_claim(rg, ann);
            return false;
        }
        if (ann.round > rg.st.round) return false; // future round; catch up later

        bool integrate = true;
        if (sc.sanity != SanityMode::Off && !is_joker(rg.st.me)) {
            SanityContext ctx;
            ctx.mode = sc.mode;
            ctx.round_active = !rg.st.active.empty() && !rg.completed;
            ctx.previous_completed = view.any && view.last_round < ann.round;
            ctx.confusion_timeout_passed = ctx.previous_completed;
            if (view.any && view.last_pid != no_pid && view.last_pid != confusion_pid &&
                ann.pid != no_pid && ann.pid != confusion_pid && view.last_pid != ann.pid &&
                sc.mode == Mode::Ranked)
                ctx.next_vs_prev_rank = order_proposals(prop(ann.pid), prop(view.last_pid));
            // did I tell this neighbor of a conflict before this announce?
            if (rg.sent_confused_turn >= 0 && rg.sent_confused_turn < ann.turn &&
                ann.round == rg.st.round)
                ctx.i_told_conflict = true;
            for (auto& s : rg.sent)
                if (s.pid != ann.pid && s.first_turn < ann.turn) ctx.i_told_conflict = true;

            Awareness my_sent = Awareness::unaware();
            if (SentEntry* s = rg.find_sent(ann.pid))
                my_sent = (s->turn == ann.turn) ? s->prev_alpha : s->alpha;
            else if (rg.sent_confused_turn >= 0 && rg.sent_confused_turn < ann.turn)
                my_sent = Awareness::confused(); // rule 3 defers to rule 5

            int elapsed = 0;
            if (view.any && view.last_pid == ann.pid && view.last_alpha == ann.alpha &&
                view.last_change_turn >= 0)
                elapsed = static_cast<int>(ann.turn - view.last_change_turn);

            std::optional<Announce> prev;
            if (view.any)
                prev = Announce{view.id, view.last_pid, view.last_alpha, view.last_turn,
                                view.last_round};
            SanityVerdict v = check_sanity(view.id, prev, ann, my_sent, elapsed, ctx);
            if (!v.ok()) {
                trace.violations.push_back({t, rg.st.me, view.id, v.rule});
                if (sc.sanity == SanityMode::Expel) {
                    expel(rg, view.id);
                    integrate = false;
                }
            }
        }

        // update history
        if (!view.any || view.last_pid != ann.pid || !(view.last_alpha == ann.alpha))
            view.last_change_turn = ann.turn;
        view.any = true;
        view.last_pid = ann.pid;
        view.last_alpha = ann.alpha;
        view.last_turn = ann.turn;
        view.last_round = ann.round;
        return integrate;
    }

    // A claim about an already completed round ("someone was fooled") is
    // believable only while news of the round end could still be in flight:
    // within d turns of our own acting.
    void handle_stale_claim(RichGnome& rg, const Announce& ann) {
        if (rg.stale_mark) return;
        if (rg.acted_turn < 0) return;
        if (t >= rg.acted_turn + d) return;
        rg.stale_mark = true;
        rg.stale_echo = ann;
    }

    void maybe_clear_confusion(RichGnome& rg, GnomeState& next) {
        if (rg.st.confused_since >= 0 && (t + 1) - rg.st.confused_since >= timeout) {
            std::int32_t nr = rg.st.round + 1;
            next.reset_round(nr);
            rg.new_round_cleanup();
        }
    }

    void rollover_completed() {
        for (std::uint32_t g = 0; g < node_count; ++g) {
            RichGnome& rg = gn[g];
            if (rg.completed && rg.reset_at >= 0 && t >= rg.reset_at) {
                std::int32_t nr = rg.st.round + 1;
                rg.st.reset_round(nr);
                rg.new_round_cleanup();
            }
        }
        // pending joiners activate once every member moved past their round
        for (std::uint32_t g = 0; g < node_count; ++g) {
            RichGnome& rg = gn[g];
            if (!rg.present || rg.member) continue;
            bool ready = true;
            for (std::uint32_t h = 0; h < node_count; ++h) {
                if (h == g || !gn[h].present || !gn[h].member) continue;
                if (gn[h].st.round <= rg.join_round) ready = false;
            }
            if (rg.join_round < 0) ready = true;
            if (ready) {
                rg.member = true;
                rg.st.join_pending = false;
                rg.st.round = 0;
                for (std::uint32_t h = 0; h < node_count; ++h)
                    if (gn[h].present && gn[h].member && h != g)
                        rg.st.round = std::max(rg.st.round, gn[h].st.round);
            }
        }
    }

    bool quiescent() const {
        if (!pending_proposals.empty() || !churn.empty()) return false;
        if (retry_at && !retry_fired) return false;
        for (auto& j : jokers) {
            std::int64_t end = j.inject_at;
            if (j.strategy == JokerStrategy::Fool) end += timeout;
            if (j.strategy == JokerStrategy::Trick) end += d;
            if (j.strategy == JokerStrategy::AnnounceSeq)
                end += static_cast<std::int64_t>(j.announces.size());
            if (t <= end) return false;
        }
        bool retry_possible = sc.retry.kind == RetryPolicy::Kind::Auto && !retry_fired;
        for (std::uint32_t g = 0; g < node_count; ++g) {
            const RichGnome& rg = gn[g];
            if (!rg.present || !rg.member) continue;
            if (rg.stale_echo) return false;
            if (rg.completed) continue;
            if (rg.st.confused) {
                if (retry_possible) return false;
                continue; // confusion-quiescence counts as settled
            }
            for (auto& e : rg.st.active)
                if (e.alpha.is_radius() && e.alpha.value() < d) return false;
            if (!rg.st.active.empty()) continue;
        }
        return true;
    }

    void finalize() {
        finished = true;
        for (auto& ri : trace.rounds) {
            if (!trace.consensus_turn && ri.consensus_turn) {
                trace.consensus_turn = ri.consensus_turn;
                trace.simultaneous = ri.simultaneous;
            }
        }
        bool any_confusion = false;
        for (auto& row : trace.turns)
            if (row.hist[0] > 0) any_confusion = true;
        if (t >= max_turns && !trace.rounds.empty() && !trace.rounds.front().consensus_turn &&
            !trace.rounds.front().confused) {
            trace.outcome = Outcome::Timeout;
        } else if (!trace.rounds.empty() && (trace.rounds.front().confused || any_confusion)) {
            trace.outcome = Outcome::Confused;
        } else if (trace.consensus_turn) {
            trace.outcome = Outcome::Consensus;
        } else {
            trace.outcome = Outcome::Timeout;
        }
    }

    void step_once() {
        if (finished) return;
        rollover_completed();
        apply_churn_events();
        start_retry_at_turn();
        apply_proposals();
        apply_joker_injections();
        build_outbox();
        detect_acting();
        update_round_status();
        record_row();

        if (t >= max_turns) {
            finalize();
            return;
        }
        if (quiescent() && !trace.turns.empty()) {
            if (settle_done) {
                finalize();
                return;
            }
            settle_done = true;
        } else {
            settle_done = false;
        }

        receive_step();
        ++t;
    }
};

SyncEngine::SyncEngine(Scenario scenario) : impl_(std::make_unique<Impl>(std::move(scenario))) {}
SyncEngine::~SyncEngine() = default;
SyncEngine::SyncEngine(SyncEngine&&) noexcept = default;
SyncEngine& SyncEngine::operator=(SyncEngine&&) noexcept = default;

void SyncEngine::step() { impl_->step_once(); }
bool SyncEngine::done() const { return impl_->finished; }
std::int64_t SyncEngine::turn() const { return impl_->t; }

std::uint32_t SyncEngine::swarm_size() const {
    std::uint32_t c = 0;
    for (auto& g : impl_->gn)
        if (g.present && g.member) ++c;
    return c;
}
bool SyncEngine::is_member(GnomeId g) const {
    return g < impl_->node_count && impl_->gn[g].present && impl_->gn[g].member;
}
bool SyncEngine::is_pending(GnomeId g) const {
    return g < impl_->node_count && impl_->gn[g].present && !impl_->gn[g].member;
}
Awareness SyncEngine::alpha(GnomeId g) const { return impl_->display_alpha(impl_->gn.at(g)); }
Awareness SyncEngine::alpha_of(GnomeId g, std::uint64_t pid) const {
    return impl_->gn.at(g).st.alpha_of(pid);
}
bool SyncEngine::is_confused(GnomeId g) const { return impl_->gn.at(g).st.confused; }
bool SyncEngine::has_acted(GnomeId g) const { return impl_->gn.at(g).acted_turn >= 0; }
std::uint64_t SyncEngine::acted_pid(GnomeId g) const { return impl_->gn.at(g).acted_pid_; }
bool SyncEngine::stale_marked(GnomeId g) const { return impl_->gn.at(g).stale_mark; }
std::int64_t SyncEngine::clock(GnomeId g) const { return impl_->gn.at(g).st.swarm_clock; }
const Proposal& SyncEngine::proposal(std::uint64_t pid) const { return impl_->prop(pid); }

void SyncEngine::set_sink(TraceSink sink) { impl_->sink = std::move(sink); }

void SyncEngine::run() {
    while (!impl_->finished) impl_->step_once();
}

TurnTrace SyncEngine::take_trace() { return std::move(impl_->trace); }

TurnTrace run(Scenario scenario) {
    bool kernel_ok = scenario.mode == Mode::Plain && scenario.proposers.size() == 1 &&
                     scenario.jokers.empty() && scenario.churn.empty() &&
                     scenario.retry.kind == RetryPolicy::Kind::None &&
                     scenario.proposers.front().turn == 0 && scenario.topology.size() > 4096;
    if (kernel_ok) {
        return run_kernel(scenario.topology, scenario.proposers.front().gnome,
                          scenario.threshold(), scenario.max_turns, scenario.record_alpha, true);
    }
    SyncEngine e(std::move(scenario));
    e.run();
    return e.take_trace();
}

std::vector<MetricsRow> metrics(const TurnTrace& trace) {
    std::vector<MetricsRow> out;
    out.reserve(trace.turns.size());
    std::int64_t cum = 0;
    for (const TurnRecord& r : trace.turns) {
        MetricsRow m;
        m.turn = r.turn;
        m.hist = r.hist;
        m.pct.resize(r.hist.size(), 0.0);
        for (std::size_t b = 0; b < r.hist.size(); ++b)
            m.pct[b] = r.members ? 100.0 * static_cast<double>(r.hist[b]) /
                                       static_cast<double>(r.members)
                                 : 0.0;
        m.bottom_count = r.bottom_count;
        cum += r.messages;
        m.cumulative_messages = cum;
        out.push_back(std::move(m));
    }
    return out;
}

} // namespace gnomes
