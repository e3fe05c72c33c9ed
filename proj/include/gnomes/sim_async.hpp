#ifndef GNOMES_SIM_ASYNC_HPP
#define GNOMES_SIM_ASYNC_HPP

#include "gnomes/adversary.hpp"
#include "gnomes/protocol.hpp"
#include "gnomes/topology.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace gnomes {

// Physical message delays: every state change reaches each neighbor after a
// sampled delay delta with 0 < delta <= tau_max.
struct DelayModel {
    enum class Kind { Constant, Uniform, PerEdgeFixed };
    Kind kind = Kind::Constant;
    double tau_max = 1.0;
    std::uint64_t seed = 0;
    double min_frac = 0.0; // uniform delays fall in (min_frac*tau_max, tau_max]
};

DelayModel::Kind delay_kind_from_string(const std::string& s);
std::string to_string(DelayModel::Kind k);

struct AsyncEventRec {
    double tau = 0.0;
    GnomeId gnome = 0;
    Awareness alpha;
};

struct AsyncTrace {
    std::uint32_t n = 0;
    int d = 0;
    double tau_max = 1.0;
    double duration = 0.0;
    std::vector<AsyncEventRec> events; // time-ordered awareness changes
    std::vector<std::vector<AsyncEventRec>> per_gnome;
    std::optional<double> consensus_time; // first instant every gnome is at >= d
    std::uint64_t messages_total = 0;

    Awareness alpha_at(GnomeId g, double tau) const;
};

struct AsyncOptions {
    int d = -1;                   // threshold; -1 -> topology d_bound
    bool tie_desc = false;        // process simultaneous events in descending sender order
    std::uint64_t event_cap = 50'000'000;
    std::vector<JokerScript> jokers; // Confuse / Fool / Backdate supported
};

// Discrete-event run: each awareness change is conveyed to every neighbor
// (and to the gnome itself) within tau_max. Deterministic for a fixed seed.
AsyncTrace run_async(const Topology& topo, GnomeId proposer, const DelayModel& delay,
                     double duration, const AsyncOptions& opts = {});

// mu_tau: minimum swarm time across the swarm at physical time tau
// (Unaware = -1). INT64_MIN when some gnome is confused at tau.
std::int64_t bottom_time(const AsyncTrace& trace, double tau);

std::optional<int> phase_at(const AsyncTrace& trace, GnomeId g, double tau);

} // namespace gnomes

#endif
