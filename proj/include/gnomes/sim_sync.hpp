#ifndef GNOMES_SIM_SYNC_HPP
#define GNOMES_SIM_SYNC_HPP

#include "gnomes/adversary.hpp"
#include "gnomes/protocol.hpp"
#include "gnomes/topology.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <vector>

namespace gnomes {

struct ScenarioError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ProposerSpec {
    GnomeId gnome = 0;
    std::int64_t turn = 0;
    std::string payload = "act";
};

struct Scenario {
    Topology topology;
    int d = -1; // consensus threshold; -1 -> topology d_bound
    Mode mode = Mode::Plain;
    SanityMode sanity = SanityMode::Off;
    std::vector<ProposerSpec> proposers;
    std::vector<JokerScript> jokers;
    std::vector<ChurnEvent> churn;
    RetryPolicy retry;
    std::int64_t max_turns = -1;    // -1 -> derived default
    int confusion_timeout = -1;     // turns before a confused gnome clears; -1 -> 2*d
    std::uint64_t seed = 0;
    std::vector<std::int64_t> ranks; // proposer rank per gnome; empty -> rank = id
    bool record_alpha = true;        // keep per-gnome alpha snapshots per turn

    int threshold() const { return d >= 0 ? d : topology.d_bound(); }
    std::int64_t timeout_turns() const {
        return confusion_timeout >= 0 ? confusion_timeout : 2 * static_cast<std::int64_t>(threshold());
    }
};

struct TurnRecord {
    std::int64_t turn = 0;
    std::vector<Awareness> alpha;   // empty when snapshots are off
    std::vector<std::int64_t> hist; // confused, unaware, r0..r_{d-1}, >= d
    bool bottom_confused = false;   // bottom value is -inf
    std::int64_t bottom_value = -1; // min alpha (Unaware = -1), valid when !bottom_confused
    std::int64_t bottom_count = 0;
    std::int64_t messages = 0;      // announces sent this turn
    std::int64_t members = 0;       // swarm size this turn (churn varies it)
};

enum class Outcome { Consensus, Confused, Timeout };
std::string to_string(Outcome o);

struct RoundInfo {
    std::int32_t round = 0;
    std::uint64_t pid = no_pid;            // winning pid, no_pid for confused rounds
    std::int64_t start_turn = 0;           // first proposal turn of the round
    std::optional<std::int64_t> consensus_turn; // all members at alpha >= d
    std::int64_t first_reach_turn = -1;    // first turn any gnome had alpha >= d
    bool simultaneous = false;             // first reach == consensus, all at once
    bool confused = false;
    std::int64_t acted_count = 0;
};

struct Violation {
    std::int64_t turn = 0;
    GnomeId detector = 0;
    GnomeId violator = 0;
    int rule = 0;
};

struct Expulsion {
    std::int64_t turn = 0;
    GnomeId detector = 0;
    GnomeId violator = 0;
};

struct ActEvent {
    GnomeId gnome = 0;
    std::uint64_t pid = no_pid;
    std::int64_t turn = 0;
};

struct TurnTrace {
    std::uint32_t n = 0;
    int d = 0;
    Mode mode = Mode::Plain;
    Outcome outcome = Outcome::Timeout;
    std::optional<std::int64_t> consensus_turn; // first turn all members at >= d
    bool simultaneous = false;
    std::vector<TurnRecord> turns;
    std::vector<RoundInfo> rounds;
    std::vector<ActEvent> acted;
    std::vector<Violation> violations;
    std::vector<Expulsion> expulsions;
    std::uint64_t messages_total = 0;
    int max_spread = 0; // max over turns of alpha spread among unconfused members
};

// Per-turn sink for streaming large runs; records arrive in turn order.
using TraceSink = std::function<void(const TurnRecord&)>;

// Deterministic lockstep engine over the full protocol feature set
// (modes, jokers, churn, sanity enforcement). One instance per run.
class SyncEngine {
public:
    explicit SyncEngine(Scenario scenario);
    ~SyncEngine();
    SyncEngine(SyncEngine&&) noexcept;
    SyncEngine& operator=(SyncEngine&&) noexcept;

    void step();       // process current turn and advance
    bool done() const;
    std::int64_t turn() const;

    // live inspection (state at the current turn)
    std::uint32_t swarm_size() const;
    bool is_member(GnomeId g) const;
    bool is_pending(GnomeId g) const;
    Awareness alpha(GnomeId g) const; // progress of the most advanced active proposal
    Awareness alpha_of(GnomeId g, std::uint64_t pid) const;
    bool is_confused(GnomeId g) const;
    bool has_acted(GnomeId g) const;
    std::uint64_t acted_pid(GnomeId g) const;
    bool stale_marked(GnomeId g) const; // trick/fool bookkeeping divergence
    std::int64_t clock(GnomeId g) const;
    const Proposal& proposal(std::uint64_t pid) const;

    void set_sink(TraceSink sink);
    void run();
    TurnTrace take_trace();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Spec operation: execute a scenario to completion.
TurnTrace run(Scenario scenario);

// Fault-free single-proposer fast path over plain arrays. Serial and
// OpenMP-parallel kernels produce identical traces; `parallel` picks one.
TurnTrace run_kernel(const Topology& topo, GnomeId proposer, int d, std::int64_t max_turns,
                     bool record_alpha, bool parallel, const TraceSink* sink = nullptr);

// Global awareness recurrence iterated t turns with no message machinery.
// Independent oracle for the engines; fault-free single-proposer setting only.
std::vector<Awareness> oracle_alpha(const Topology& topo, GnomeId proposer, std::int64_t t);

struct MetricsRow {
    std::int64_t turn = 0;
    std::vector<std::int64_t> hist;
    std::vector<double> pct;          // same buckets, percent of members
    std::int64_t bottom_count = 0;
    std::int64_t cumulative_messages = 0;
};

// Per-turn histogram table (the million-swarm figure's data).
std::vector<MetricsRow> metrics(const TurnTrace& trace);

} // namespace gnomes

#endif
