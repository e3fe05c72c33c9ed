#include "gnomes/protocol.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>
#include <tuple>

namespace gnomes {

Mode mode_from_string(const std::string& s) {
    if (s == "plain") return Mode::Plain;
    if (s == "ranked") return Mode::Ranked;
    if (s == "merry") return Mode::Merry;
    throw std::invalid_argument("unknown mode: " + s);
}

std::string to_string(Mode m) {
    switch (m) {
    case Mode::Plain: return "plain";
    case Mode::Ranked: return "ranked";
    case Mode::Merry: return "merry";
    }
    return "?";
}

std::strong_ordering order_proposals(const Proposal& a, const Proposal& b) {
    return std::tie(a.nominal_turn, a.proposer_rank, a.pid) <=>
           std::tie(b.nominal_turn, b.proposer_rank, b.pid);
}

Awareness alpha_step(Awareness own, std::span<const Awareness> heard) {
    if (own.is_confused()) return Awareness::confused();
    bool any_aware = false;
    std::int32_t lowest = std::numeric_limits<std::int32_t>::max();
    for (Awareness a : heard) {
        if (a.is_confused()) return Awareness::confused();
        if (a.is_radius()) any_aware = true;
        lowest = std::min(lowest, a.as_int());
    }
    if (!any_aware) return own; // still unaware (or clamped at own)
    return std::max(own, Awareness::radius(lowest + 1));
}

bool consensus_reached(Awareness a, int d) { return a.is_radius() && a.value() >= d; }

std::optional<int> phase_of(Awareness a, int d) {
    if (!a.is_radius()) return std::nullopt;
    return a.value() / d;
}

std::int64_t clock_step(std::int64_t own, std::span<const std::int64_t> heard) {
    std::int64_t lowest = own;
    for (std::int64_t c : heard) lowest = std::min(lowest, c);
    return std::max(own, lowest + 1);
}

BackdateVerdict backdate_check(const Proposal& p, std::int64_t first_heard_clock, int d) {
    return (first_heard_clock - p.nominal_turn > d) ? BackdateVerdict::ExpelProposer
                                                    : BackdateVerdict::Plausible;
}

const Awareness* GnomeState::find_alpha(std::uint64_t pid) const {
    for (auto& e : active)
        if (e.pid == pid) return &e.alpha;
    return nullptr;
}

Awareness* GnomeState::find_alpha(std::uint64_t pid) {
    for (auto& e : active)
        if (e.pid == pid) return &e.alpha;
    return nullptr;
}

Awareness GnomeState::alpha_of(std::uint64_t pid) const {
    const Awareness* a = find_alpha(pid);
    return a ? *a : Awareness::unaware();
}

void GnomeState::set_alpha(std::uint64_t pid, Awareness a) {
    if (Awareness* slot = find_alpha(pid)) {
        *slot = a;
        return;
    }
    active.push_back({pid, a});
}

void GnomeState::mark_confused(std::int64_t turn) {
    if (!confused) confused_since = turn;
    confused = true;
    for (auto& e : active) e.alpha = Awareness::confused();
}

void GnomeState::reset_round(std::int32_t new_round) {
    round = new_round;
    active.clear();
    confused = false;
    confused_since = -1;
    // swarm_clock keeps counting across rounds
}

Announce propose(GnomeState& st, const Proposal& p, std::int64_t turn) {
    if (st.confused) throw std::logic_error("propose: gnome is confused");
    if (st.join_pending) throw std::logic_error("propose: gnome not yet a swarm member");
    if (!st.active.empty())
        throw std::logic_error("propose: another proposal is active and uncompleted");
    st.set_alpha(p.pid, Awareness::radius(0));
    return Announce{st.me, p.pid, Awareness::radius(0), turn, st.round};
}

std::uint64_t on_conflict(GnomeState& st, const Proposal& a, const Proposal& b, Mode mode,
                          std::int64_t turn) {
    if (a.pid == b.pid) return a.pid; // not contradicting
    if (mode == Mode::Plain) {
        st.mark_confused(turn);
        return no_pid;
    }
    // Ranked: keep the rank_key-smaller proposal, drop the other.
    const Proposal& keep = order_proposals(a, b) < 0 ? a : b;
    const Proposal& drop = order_proposals(a, b) < 0 ? b : a;
    std::erase_if(st.active, [&](const ActiveEntry& e) { return e.pid == drop.pid; });
    if (!st.find_alpha(keep.pid)) st.set_alpha(keep.pid, Awareness::unaware());
    return keep.pid;
}

SanityVerdict check_sanity(GnomeId /*neighbor*/, const std::optional<Announce>& prev,
                           const Announce& next, Awareness my_last_alpha_sent, int turns_elapsed,
                           const SanityContext& ctx) {
    bool same_pid = prev && prev->pid == next.pid;

    // 1: awareness cannot backtrack (becoming confused is not a backtrack).
    if (same_pid && prev->alpha.is_radius() && next.alpha.is_radius() &&
        next.alpha < prev->alpha)
        return {1};

    // 2: awareness must grow over any 2-turn window while a round is live.
    if (same_pid && ctx.round_active && next.alpha.is_radius() && next.alpha == prev->alpha &&
        turns_elapsed >= 2)
        return {2};

    // 3: at most one more than what we announced to him.
    if (next.alpha.is_radius() && !my_last_alpha_sent.is_confused() &&
        next.alpha.as_int() > my_last_alpha_sent.as_int() + 1)
        return {3};

    // 4: no switching to a different action mid-round. Ranked mode mandates
    // switching down to a smaller rank key; merry mode tracks in parallel.
    if (prev && prev->pid != next.pid && prev->pid != confusion_pid &&
        next.pid != confusion_pid && next.alpha.is_radius() &&
        !(ctx.previous_completed || ctx.confusion_timeout_passed)) {
        if (ctx.mode == Mode::Plain) return {4};
        if (ctx.mode == Mode::Ranked &&
            (!ctx.next_vs_prev_rank || *ctx.next_vs_prev_rank >= 0))
            return {4};
    }

    // 5: must become confused after being told of a conflict (plain mode),
    // and may never un-confuse within a round.
    if (ctx.mode == Mode::Plain && next.alpha.is_radius()) {
        if (ctx.i_told_conflict) return {5};
        if (prev && prev->alpha.is_confused()) return {5};
    }

    return {0};
}

} // namespace gnomes
