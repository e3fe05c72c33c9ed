#ifndef GNOMES_ADVERSARY_HPP
#define GNOMES_ADVERSARY_HPP

#include "gnomes/protocol.hpp"

#include <cstdint>
#include <vector>

namespace gnomes {

// Joker strategies, named after what the injection does to the round:
//   Confuse:  competing proposal while the victim proposal is still spreading.
//   Fool:     fabricated confusion claim while gnomes are deciding to act.
//   Trick:    competing claim against an already completed round.
//   Backdate: competing proposal whose nominal creation turn is moved back.
//   AnnounceSeq: raw scripted announces, one per turn from inject_at on.
enum class JokerStrategy { Confuse, Fool, Trick, Backdate, AnnounceSeq };

JokerStrategy joker_strategy_from_string(const std::string& s);
std::string to_string(JokerStrategy s);

struct JokerScript {
    GnomeId joker = 0;
    JokerStrategy strategy = JokerStrategy::Confuse;
    std::int64_t inject_at = 0;     // sync turn
    double inject_at_time = -1.0;   // async timestamp; <0 -> inject_at * tau_max
    std::int64_t backdate_offset = 1;
    std::string payload = "bogus";
    std::vector<Announce> announces; // AnnounceSeq only
};

enum class ChurnAction { Join, Leave };

struct ChurnEvent {
    std::int64_t turn = 0;
    double time = -1.0; // async timestamp; <0 -> turn * tau_max
    GnomeId gnome = 0;
    ChurnAction action = ChurnAction::Leave;
    std::vector<GnomeId> neighbors; // join only
};

enum class SanityMode { Off, Log, Expel };

SanityMode sanity_mode_from_string(const std::string& s);
std::string to_string(SanityMode m);

struct RetryPolicy {
    enum class Kind { None, Auto, AtTurn } kind = Kind::None;
    std::int64_t turn = -1;   // AtTurn: earliest turn for the retry proposal
    std::int64_t gnome = -1;  // retrying gnome; -1 -> first scripted proposer
};

} // namespace gnomes

#endif
