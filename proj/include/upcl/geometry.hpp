#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "upcl/common.hpp"
#include "upcl/rng.hpp"

namespace upcl {

/// How a prototype set was produced. Gram-Schmidt is the default working
/// generator (orthogonal rows, extendable online); the others exist for the
/// uniformity study and as alternative heads.
enum class Generator { GramSchmidt, SimplexEtf, Muller, Mhe };

std::string generator_name(Generator g);
Generator generator_from_name(const std::string& name);

/// Non-learnable class anchors: unit rows on S^{d-1}.
///
/// Invariants by generator:
///  - every row has unit norm (1e-6)
///  - GramSchmidt: pairwise |dot| <= 1e-6, row count <= dim
///  - SimplexEtf with C rows: pairwise dot == -1/(C-1) (1e-6), rows sum to
///    zero (1e-6), row count <= dim+1
struct PrototypeSet {
    std::size_t dim = 0;
    Generator generator = Generator::GramSchmidt;
    Matrix rows;

    PrototypeSet() = default;
    PrototypeSet(std::size_t d, Generator g) : dim(d), generator(g), rows(0, d) {}

    std::size_t count() const { return rows.rows; }
};

/// Appends k_new rows orthonormal to everything already present. Existing
/// rows are copied bit-identical (online extension: earlier tasks' anchors
/// never move). Throws CapacityExceeded when count + k_new > dim.
PrototypeSet gram_schmidt_extend(const PrototypeSet& existing, std::size_t k_new, Rng& rng);

/// C unit rows with every pairwise inner product equal to -1/(C-1) and zero
/// row sum, embedded in dimension d by a seeded random rotation.
/// Requires C >= 2 and C <= d+1 (CapacityExceeded otherwise).
PrototypeSet simplex_etf(std::size_t C, std::size_t d, Rng& rng);

/// C independent gaussian draws projected to the sphere.
PrototypeSet muller_random(std::size_t C, std::size_t d, Rng& rng);

/// Appends k_new fresh gaussian unit rows to an existing Muller set.
PrototypeSet muller_extend(const PrototypeSet& existing, std::size_t k_new, Rng& rng);

struct MheResult {
    PrototypeSet protos;
    std::vector<double> energy_trace; // energy after each iteration, non-increasing
    // Set when the energy moved by less than 1e-9 over the last 10% of
    // iterations (plateau; informational, not a failure).
    bool non_convergence = false;
};

/// Minimizes the inverse-distance (Riesz s=1) energy sum_{i<j} 1/|t_i - t_j|
/// by projected gradient steps starting from a Muller draw. A step that would
/// raise the energy is rejected and the step size halved, so the recorded
/// trace is non-increasing.
MheResult mhe_optimize(std::size_t C, std::size_t d, std::size_t iters, double step, Rng& rng);

/// Same descent, but only the k_new appended rows move; existing rows are
/// frozen and contribute fixed repulsion terms.
MheResult mhe_extend(const PrototypeSet& existing, std::size_t k_new, std::size_t iters,
                     double step, Rng& rng);

/// min over unordered pairs of (1 - <t_i, t_j>). Throws TooFewRows below 2.
double min_cosine_distance(const PrototypeSet& protos);

} // namespace upcl
