#include "gnomes/topology.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gnomes {

TopologyKind topology_kind_from_string(const std::string& s) {
    if (s == "complete") return TopologyKind::Complete;
    if (s == "path") return TopologyKind::Path;
    if (s == "ring") return TopologyKind::Ring;
    if (s == "star") return TopologyKind::Star;
    if (s == "grid") return TopologyKind::Grid;
    if (s == "random-regular") return TopologyKind::RandomRegular;
    if (s == "small-world") return TopologyKind::SmallWorld;
    throw TopologyError("unknown topology kind: " + s);
}

std::string to_string(TopologyKind k) {
    switch (k) {
    case TopologyKind::Complete: return "complete";
    case TopologyKind::Path: return "path";
    case TopologyKind::Ring: return "ring";
    case TopologyKind::Star: return "star";
    case TopologyKind::Grid: return "grid";
    case TopologyKind::RandomRegular: return "random-regular";
    case TopologyKind::SmallWorld: return "small-world";
    }
    return "?";
}

Topology Topology::from_edges(std::uint32_t n, int d_bound,
                              std::span<const std::pair<GnomeId, GnomeId>> edges,
                              bool validate_bound) {
    if (n == 0) throw TopologyError("empty swarm");
    if (d_bound < 0) throw TopologyError("negative diameter bound");

    std::vector<std::pair<GnomeId, GnomeId>> dir;
    dir.reserve(edges.size() * 2);
    for (auto [u, v] : edges) {
        if (u >= n || v >= n)
            throw TopologyError("edge endpoint out of range: " + std::to_string(u) + " " +
                                std::to_string(v));
        if (u == v) throw TopologyError("explicit self-loop on gnome " + std::to_string(u));
        dir.emplace_back(u, v);
        dir.emplace_back(v, u);
    }
    std::sort(dir.begin(), dir.end());
    dir.erase(std::unique(dir.begin(), dir.end()), dir.end());

    Topology t;
    t.n_ = n;
    t.d_bound_ = d_bound;
    t.offsets_.assign(n + 1, 0);
    for (auto& e : dir) t.offsets_[e.first + 1]++;
    for (std::uint32_t i = 0; i < n; ++i) t.offsets_[i + 1] += t.offsets_[i];
    t.adj_.resize(dir.size());
    for (std::size_t i = 0; i < dir.size(); ++i) t.adj_[i] = dir[i].second;

    // connectivity
    auto dist = t.bfs_distances(0);
    for (std::uint32_t g = 0; g < n; ++g)
        if (dist[g] < 0)
            throw TopologyError("disconnected graph: gnome " + std::to_string(g) +
                                " unreachable from gnome 0");

    if (validate_bound) {
        int d = (n <= exact_diameter_limit) ? t.diameter() : t.diameter_lower_bound(64, 0x9e3779b9);
        if (d > d_bound)
            throw TopologyError("actual diameter " + std::to_string(d) +
                                " exceeds declared bound " + std::to_string(d_bound));
    }
    return t;
}

Topology Topology::load(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw TopologyError("cannot open topology file: " + file.string());

    std::string line;
    std::size_t lineno = 0;
    std::uint32_t n = 0;
    int d_bound = 0;
    std::vector<std::pair<GnomeId, GnomeId>> edges;

    auto fail = [&](const std::string& msg) {
        throw TopologyError(file.string() + ":" + std::to_string(lineno) + ": " + msg);
    };

    bool header_seen = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        if (!header_seen) {
            if (!(ls >> n >> d_bound)) fail("expected header 'n d_bound'");
            header_seen = true;
            continue;
        }
        long long u = -1, v = -1;
        if (!(ls >> u >> v)) fail("expected edge 'u v'");
        if (u < 0 || v < 0 || u >= n || v >= n) fail("edge endpoint out of range");
        if (u == v) fail("self-loop (neighborhoods include the gnome implicitly)");
        edges.emplace_back(static_cast<GnomeId>(u), static_cast<GnomeId>(v));
    }
    if (!header_seen) throw TopologyError(file.string() + ": missing header line");

    try {
        return from_edges(n, d_bound, edges);
    } catch (const TopologyError& e) {
        throw TopologyError(file.string() + ": " + e.what());
    }
}

void Topology::save(const std::filesystem::path& file) const {
    std::ofstream out(file);
    if (!out) throw TopologyError("cannot write topology file: " + file.string());
    out << n_ << ' ' << d_bound_ << '\n';
    for (std::uint32_t g = 0; g < n_; ++g)
        for (GnomeId h : neighbors(g))
            if (g < h) out << g << ' ' << h << '\n';
}

std::vector<GnomeId> Topology::k_neighborhood(GnomeId g, int k) const {
    check_id(g);
    if (k < 0) return {};
    std::vector<GnomeId> frontier{g};
    std::vector<std::int32_t> depth(n_, -1);
    depth[g] = 0;
    std::vector<GnomeId> out{g};
    for (int step = 0; step < k && !frontier.empty(); ++step) {
        std::vector<GnomeId> next;
        for (GnomeId u : frontier) {
            for (GnomeId v : neighbors(u)) {
                if (depth[v] < 0) {
                    depth[v] = step + 1;
                    next.push_back(v);
                    out.push_back(v);
                }
            }
        }
        frontier = std::move(next);
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<std::int32_t> Topology::bfs_distances(GnomeId g) const {
    check_id(g);
    std::vector<std::int32_t> dist(n_, -1);
    std::vector<GnomeId> queue;
    queue.reserve(n_);
    dist[g] = 0;
    queue.push_back(g);
    for (std::size_t head = 0; head < queue.size(); ++head) {
        GnomeId u = queue[head];
        for (GnomeId v : neighbors(u)) {
            if (dist[v] < 0) {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    return dist;
}

int Topology::bfs_ecc(GnomeId g, std::vector<std::int32_t>& dist, std::vector<GnomeId>& queue) const {
    std::fill(dist.begin(), dist.end(), -1);
    queue.clear();
    dist[g] = 0;
    queue.push_back(g);
    int ecc = 0;
    for (std::size_t head = 0; head < queue.size(); ++head) {
        GnomeId u = queue[head];
        for (GnomeId v : neighbors(u)) {
            if (dist[v] < 0) {
                dist[v] = dist[u] + 1;
                ecc = std::max(ecc, dist[v]);
                queue.push_back(v);
            }
        }
    }
    if (queue.size() != n_) throw TopologyError("disconnected graph");
    return ecc;
}

int Topology::eccentricity(GnomeId g) const {
    check_id(g);
    std::vector<std::int32_t> dist(n_);
    std::vector<GnomeId> queue;
    queue.reserve(n_);
    return bfs_ecc(g, dist, queue);
}

int Topology::diameter() const {
    int best = 0;
#ifdef _OPENMP
#pragma omp parallel
    {
        std::vector<std::int32_t> dist(n_);
        std::vector<GnomeId> queue;
        queue.reserve(n_);
        int local = 0;
#pragma omp for schedule(dynamic, 64) nowait
        for (std::int64_t g = 0; g < static_cast<std::int64_t>(n_); ++g)
            local = std::max(local, bfs_ecc(static_cast<GnomeId>(g), dist, queue));
#pragma omp critical
        best = std::max(best, local);
    }
#else
    best = diameter_serial();
#endif
    return best;
}

int Topology::diameter_serial() const {
    std::vector<std::int32_t> dist(n_);
    std::vector<GnomeId> queue;
    queue.reserve(n_);
    int best = 0;
    for (std::uint32_t g = 0; g < n_; ++g) best = std::max(best, bfs_ecc(g, dist, queue));
    return best;
}

int Topology::diameter_lower_bound(int samples, std::uint64_t seed) const {
    std::mt19937_64 rng(seed);
    std::vector<std::int32_t> dist(n_);
    std::vector<GnomeId> queue;
    queue.reserve(n_);
    int best = 0;
    GnomeId far = 0;
    for (int s = 0; s < samples; ++s) {
        GnomeId g;
        if (s == 0) {
            g = 0;
        } else if (s % 2 == 1) {
            g = far; // double-sweep: restart from the farthest gnome found
        } else {
            g = static_cast<GnomeId>(rng() % n_);
        }
        int ecc = bfs_ecc(g, dist, queue);
        best = std::max(best, ecc);
        for (std::uint32_t v = 0; v < n_; ++v)
            if (dist[v] == ecc) {
                far = v;
                break;
            }
    }
    return best;
}

GnomeId Topology::max_eccentricity_gnome() const {
    if (n_ <= exact_diameter_limit) {
        std::vector<std::int32_t> dist(n_);
        std::vector<GnomeId> queue;
        queue.reserve(n_);
        GnomeId best = 0;
        int best_ecc = -1;
        for (std::uint32_t g = 0; g < n_; ++g) {
            int e = bfs_ecc(g, dist, queue);
            if (e > best_ecc) {
                best_ecc = e;
                best = g;
            }
        }
        return best;
    }
    // Large graph: farthest gnome reached by a double sweep from 0.
    auto d0 = bfs_distances(0);
    GnomeId far = static_cast<GnomeId>(std::max_element(d0.begin(), d0.end()) - d0.begin());
    auto d1 = bfs_distances(far);
    return static_cast<GnomeId>(std::max_element(d1.begin(), d1.end()) - d1.begin());
}

namespace {

using EdgeList = std::vector<std::pair<GnomeId, GnomeId>>;

Topology build(std::uint32_t n, int target_d, const EdgeList& edges, bool validate = true) {
    return Topology::from_edges(n, target_d, edges, validate);
}

EdgeList path_edges(std::uint32_t n) {
    EdgeList e;
    for (std::uint32_t i = 0; i + 1 < n; ++i) e.emplace_back(i, i + 1);
    return e;
}

// Union of random Hamiltonian cycles: connected by construction and close
// to regular, with random-graph (logarithmic) diameter.
EdgeList random_cycles_edges(std::uint32_t n, int cycles, std::mt19937_64& rng) {
    EdgeList edges;
    std::vector<GnomeId> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (int c = 0; c < cycles; ++c) {
        std::shuffle(perm.begin(), perm.end(), rng);
        for (std::uint32_t i = 0; i < n; ++i) {
            GnomeId u = perm[i], v = perm[(i + 1) % n];
            if (u != v) edges.emplace_back(u, v);
        }
    }
    return edges;
}

int measured_or_sampled_diameter(const Topology& t, std::uint64_t seed) {
    if (t.size() <= Topology::exact_diameter_limit) return t.diameter();
    return t.diameter_lower_bound(64, seed);
}

Topology generate_random_regular(std::uint32_t n, int target_d, std::uint64_t seed) {
    if (n <= 4 || target_d == 1) {
        EdgeList e;
        for (std::uint32_t i = 0; i < n; ++i)
            for (std::uint32_t j = i + 1; j < n; ++j) e.emplace_back(i, j);
        return build(n, target_d, e);
    }
    if (target_d < 1) throw TopologyError("random-regular needs target_d >= 1 for n >= 2");

    // Smallest degree whose random-graph diameter undershoots the target by
    // one turn of margin: (k-1)^(target_d-1) >= n.
    int exponent = std::max(1, target_d - 1);
    int k = static_cast<int>(std::ceil(std::pow(static_cast<double>(n), 1.0 / exponent))) + 1;
    k = std::max(4, k + (k % 2));

    std::mt19937_64 rng(seed);
    for (int attempt = 0; attempt < 32; ++attempt) {
        int cycles = k / 2;
        auto edges = random_cycles_edges(n, cycles, rng);
        Topology t = build(n, target_d, edges, false);
        int d = measured_or_sampled_diameter(t, seed + attempt);
        if (d <= target_d) return t;
        k += 2; // densify
    }
    throw TopologyError("random-regular: could not meet diameter bound " +
                        std::to_string(target_d) + " for n=" + std::to_string(n));
}

Topology generate_small_world(std::uint32_t n, int target_d, std::uint64_t seed) {
    if (n <= 3) return generate_random_regular(n, target_d, seed);
    std::mt19937_64 rng(seed);
    // Newman-Watts: ring lattice plus added shortcuts (never rewired, so the
    // graph stays connected); densify until the bound holds.
    std::size_t shortcuts = std::max<std::size_t>(4, n / 8);
    for (int attempt = 0; attempt < 32; ++attempt) {
        EdgeList edges;
        for (std::uint32_t i = 0; i < n; ++i) {
            edges.emplace_back(i, (i + 1) % n);
            if (n > 4) edges.emplace_back(i, (i + 2) % n);
        }
        for (std::size_t s = 0; s < shortcuts; ++s) {
            GnomeId u = static_cast<GnomeId>(rng() % n);
            GnomeId v = static_cast<GnomeId>(rng() % n);
            if (u != v) edges.emplace_back(u, v);
        }
        Topology t = build(n, target_d, edges, false);
        int d = measured_or_sampled_diameter(t, seed + attempt);
        if (d <= target_d) return t;
        shortcuts *= 2;
    }
    throw TopologyError("small-world: could not meet diameter bound " + std::to_string(target_d) +
                        " for n=" + std::to_string(n));
}

Topology generate_grid(std::uint32_t n, int target_d, std::uint64_t seed) {
    (void)seed;
    // Exact factorization n = rows*cols with minimal rows+cols (closest to
    // square); diameter of a full grid is rows+cols-2.
    std::uint32_t best_r = 1;
    for (std::uint32_t r = 1; r * r <= n; ++r)
        if (n % r == 0) best_r = r;
    std::uint32_t rows = best_r, cols = n / best_r;
    if (static_cast<int>(rows + cols) - 2 > target_d)
        throw TopologyError("grid: best factorization " + std::to_string(rows) + "x" +
                            std::to_string(cols) + " has diameter " +
                            std::to_string(rows + cols - 2) + " > target " +
                            std::to_string(target_d));
    EdgeList e;
    auto id = [cols](std::uint32_t r, std::uint32_t c) { return r * cols + c; };
    for (std::uint32_t r = 0; r < rows; ++r)
        for (std::uint32_t c = 0; c < cols; ++c) {
            if (c + 1 < cols) e.emplace_back(id(r, c), id(r, c + 1));
            if (r + 1 < rows) e.emplace_back(id(r, c), id(r + 1, c));
        }
    return build(n, target_d, e);
}

} // namespace

Topology generate(TopologyKind kind, std::uint32_t n, int target_d, std::uint64_t seed) {
    if (n == 0) throw TopologyError("empty swarm");
    if (target_d < 0) throw TopologyError("negative target diameter");
    if (n == 1) return build(1, target_d, {});

    auto require = [&](int actual_d) {
        if (actual_d > target_d)
            throw TopologyError(to_string(kind) + " with n=" + std::to_string(n) +
                                " has diameter " + std::to_string(actual_d) + " > target " +
                                std::to_string(target_d));
    };

    switch (kind) {
    case TopologyKind::Complete: {
        require(1);
        EdgeList e;
        for (std::uint32_t i = 0; i < n; ++i)
            for (std::uint32_t j = i + 1; j < n; ++j) e.emplace_back(i, j);
        return build(n, target_d, e);
    }
    case TopologyKind::Path: {
        require(static_cast<int>(n) - 1);
        return build(n, target_d, path_edges(n));
    }
    case TopologyKind::Ring: {
        if (n == 2) {
            require(1);
            return build(n, target_d, path_edges(2));
        }
        require(static_cast<int>(n / 2));
        EdgeList e = path_edges(n);
        e.emplace_back(n - 1, 0);
        return build(n, target_d, e);
    }
    case TopologyKind::Star: {
        require(n == 2 ? 1 : 2);
        EdgeList e;
        for (std::uint32_t i = 1; i < n; ++i) e.emplace_back(0, i);
        return build(n, target_d, e);
    }
    case TopologyKind::Grid:
        return generate_grid(n, target_d, seed);
    case TopologyKind::RandomRegular:
        return generate_random_regular(n, target_d, seed);
    case TopologyKind::SmallWorld:
        return generate_small_world(n, target_d, seed);
    }
    throw TopologyError("unreachable");
}

} // namespace gnomes
