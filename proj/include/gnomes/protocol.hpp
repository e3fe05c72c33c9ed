#ifndef GNOMES_PROTOCOL_HPP
#define GNOMES_PROTOCOL_HPP

#include "gnomes/awareness.hpp"

#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace gnomes {

// Conflict-resolution mode for a round.
//   Plain:  a second proposal confuses; confusion spreads and blocks consensus.
//   Ranked: proposals are ordered by (nominal turn, proposer rank, pid); the
//           smaller key wins, later injections are dropped, backdating is policed.
//   Merry:  every proposal's awareness is tracked independently; gnomes act on
//           whichever reaches the threshold first (ties by rank key).
enum class Mode { Plain, Ranked, Merry };

Mode mode_from_string(const std::string& s);
std::string to_string(Mode m);

inline constexpr std::uint64_t no_pid = 0;
// pid carried by pure confusion announces.
inline constexpr std::uint64_t confusion_pid = ~std::uint64_t{0};

struct Proposal {
    std::uint64_t pid = no_pid;
    GnomeId proposer = 0;
    std::int64_t nominal_turn = 0; // swarm time claimed at creation
    std::int64_t proposer_rank = 0;
    std::string payload;
};

// Strict total order on rank_key = (nominal_turn, proposer_rank, pid).
std::strong_ordering order_proposals(const Proposal& a, const Proposal& b);

struct Announce {
    GnomeId sender = 0;
    std::uint64_t pid = no_pid;
    Awareness alpha;            // never Unaware: gnomes do not announce ignorance
    std::int64_t turn = 0;      // sync turn (async uses event timestamps)
    std::int32_t round = 0;     // engine envelope, not part of the trace format
};

// One recurrence step: 1 + min over everything heard (self included), with
// Confused absorbing and a monotonicity clamp so faulty input cannot drag an
// honest gnome backward.
Awareness alpha_step(Awareness own, std::span<const Awareness> heard);

// True once the d-neighborhood provably agrees.
bool consensus_reached(Awareness a, int d);

// Consensus phase floor(k/d); nullopt for Unaware/Confused gnomes.
std::optional<int> phase_of(Awareness a, int d);

// Swarm time: max(own, 1 + min of heard clocks). Monotone across rounds.
std::int64_t clock_step(std::int64_t own, std::span<const std::int64_t> heard);

enum class BackdateVerdict { Plausible, ExpelProposer };

// A proposal first heard more than d clock turns after its claimed creation
// is impossible in a diameter-d swarm: expel its proposer.
BackdateVerdict backdate_check(const Proposal& p, std::int64_t first_heard_clock, int d);

struct ActiveEntry {
    std::uint64_t pid = no_pid;
    Awareness alpha;
};

// Per-gnome round state. Sanity bookkeeping (latest announce per neighbor)
// lives with the engines, which own the neighbor views.
struct GnomeState {
    GnomeId me = 0;
    std::int32_t round = 0;
    std::vector<ActiveEntry> active;
    bool confused = false;
    std::int64_t swarm_clock = 0;
    bool join_pending = false;
    std::int64_t confused_since = -1; // turn confusion began, -1 if never

    const Awareness* find_alpha(std::uint64_t pid) const;
    Awareness* find_alpha(std::uint64_t pid);
    Awareness alpha_of(std::uint64_t pid) const; // Unaware when absent
    void set_alpha(std::uint64_t pid, Awareness a);
    void mark_confused(std::int64_t turn);
    void reset_round(std::int32_t new_round);
};

// Start a round with one's own proposal. Throws std::logic_error on the
// self-guard violations of sanity rule 4 (active uncompleted round, confusion,
// pending join).
Announce propose(GnomeState& st, const Proposal& p, std::int64_t turn);

// Two distinct proposals met in one round. Plain mode confuses; Ranked keeps
// the rank_key-smaller one and drops the other. Returns the surviving pid
// (no_pid when confused). Merry mode never calls this.
std::uint64_t on_conflict(GnomeState& st, const Proposal& a, const Proposal& b, Mode mode,
                          std::int64_t turn);

// ---- sanity checking -------------------------------------------------------

struct SanityContext {
    Mode mode = Mode::Plain;
    bool round_active = true;          // an uncompleted action is circulating
    bool previous_completed = false;   // the round for prev's pid completed
    bool confusion_timeout_passed = false;
    bool i_told_conflict = false;      // I sent this neighbor a conflicting pid or Confused
    // ranked mode: rank_key ordering of next.pid versus prev->pid
    std::optional<std::strong_ordering> next_vs_prev_rank;
};

// 0 = ok, otherwise the lowest-numbered violated rule:
//   1 backtracked awareness   2 stagnant awareness over a 2-turn window
//   3 announced more than what we told him plus one
//   4 switched actions mid-round   5 kept progressing after a told conflict
struct SanityVerdict {
    int rule = 0;
    bool ok() const { return rule == 0; }
};

// prev is this neighbor's previous announce (nullopt on first contact);
// my_last_alpha_sent is our latest announced awareness for next.pid (Unaware
// if we never announced it); turns_elapsed counts turns since the neighbor's
// announced alpha last changed.
SanityVerdict check_sanity(GnomeId neighbor, const std::optional<Announce>& prev,
                           const Announce& next, Awareness my_last_alpha_sent, int turns_elapsed,
                           const SanityContext& ctx = {});

} // namespace gnomes

#endif
