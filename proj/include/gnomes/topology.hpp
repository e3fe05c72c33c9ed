#ifndef GNOMES_TOPOLOGY_HPP
#define GNOMES_TOPOLOGY_HPP

#include "gnomes/awareness.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace gnomes {

struct TopologyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class TopologyKind { Complete, Path, Ring, Star, Grid, RandomRegular, SmallWorld };

TopologyKind topology_kind_from_string(const std::string& s);
std::string to_string(TopologyKind k);

// Undirected connected communication graph with a declared diameter bound.
// Adjacency lists store only other gnomes; every neighborhood operation
// treats g as a member of N(g).
class Topology {
public:
    // Builds from an undirected edge list and validates connectivity.
    // Diameter validation against d_bound is exact up to `exact_diameter_limit`
    // nodes and sample-based above it (see diameter_lower_bound).
    static Topology from_edges(std::uint32_t n, int d_bound,
                               std::span<const std::pair<GnomeId, GnomeId>> edges,
                               bool validate_bound = true);

    static Topology load(const std::filesystem::path& file);
    void save(const std::filesystem::path& file) const;

    std::uint32_t size() const { return n_; }
    int d_bound() const { return d_bound_; }
    std::size_t edge_count() const { return adj_.size() / 2; }

    std::span<const GnomeId> neighbors(GnomeId g) const {
        check_id(g);
        return {adj_.data() + offsets_[g], adj_.data() + offsets_[g + 1]};
    }
    std::size_t degree(GnomeId g) const { return neighbors(g).size(); }
    // Sum over gnomes of |N(g)| including the implicit self-edge.
    std::uint64_t neighborhood_weight() const { return adj_.size() + n_; }

    // N^k(g): every gnome within k hops, g included for k >= 0.
    std::vector<GnomeId> k_neighborhood(GnomeId g, int k) const;

    // Hop distances from g; -1 marks unreachable (only in invalid graphs).
    std::vector<std::int32_t> bfs_distances(GnomeId g) const;

    int eccentricity(GnomeId g) const;

    // Exact diameter by all-source BFS, OpenMP across sources.
    int diameter() const;
    // Serial reference for the parallel kernel.
    int diameter_serial() const;

    // Max eccentricity over `samples` deterministic pseudo-random sources.
    // A lower bound on the true diameter; used to vet huge generated graphs.
    int diameter_lower_bound(int samples, std::uint64_t seed) const;

    GnomeId max_eccentricity_gnome() const;

    static constexpr std::uint32_t exact_diameter_limit = 10'000;

private:
    void check_id(GnomeId g) const {
        if (g >= n_) throw TopologyError("unknown gnome id " + std::to_string(g));
    }
    int bfs_ecc(GnomeId g, std::vector<std::int32_t>& dist, std::vector<GnomeId>& queue) const;

    std::uint32_t n_ = 0;
    int d_bound_ = 0;
    std::vector<std::uint64_t> offsets_;
    std::vector<GnomeId> adj_;
};

// Deterministic topology generator. Random kinds measure the diameter and
// retry or densify (up to 32 attempts) until it fits target_d; infeasible
// fixed-shape combinations throw TopologyError.
Topology generate(TopologyKind kind, std::uint32_t n, int target_d, std::uint64_t seed);

} // namespace gnomes

#endif
