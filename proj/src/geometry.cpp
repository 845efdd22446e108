#include "upcl/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "upcl/errors.hpp"

namespace upcl {

std::string generator_name(Generator g) {
    switch (g) {
        case Generator::GramSchmidt: return "gram_schmidt";
        case Generator::SimplexEtf: return "simplex_etf";
        case Generator::Muller: return "muller";
        case Generator::Mhe: return "mhe";
    }
    return "unknown";
}

Generator generator_from_name(const std::string& name) {
    if (name == "gram_schmidt") return Generator::GramSchmidt;
    if (name == "simplex_etf") return Generator::SimplexEtf;
    if (name == "muller") return Generator::Muller;
    if (name == "mhe") return Generator::Mhe;
    throw ConfigError("unknown generator '" + name + "'");
}

namespace {

void fill_gaussian_row(double* row, std::size_t d, Rng& rng) {
    for (std::size_t c = 0; c < d; ++c) row[c] = rng.gaussian();
}

// Subtracts the projection of `row` onto each row of `basis` (all unit and
// mutually orthogonal). Two passes kill the residual left by the first.
void orthogonalize_against(double* row, const Matrix& basis, std::size_t upto) {
    for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t r = 0; r < upto; ++r) {
            const double* b = basis.row(r);
            const double proj = dot(row, b, basis.cols);
            for (std::size_t c = 0; c < basis.cols; ++c) row[c] -= proj * b[c];
        }
    }
}

} // namespace

PrototypeSet gram_schmidt_extend(const PrototypeSet& existing, std::size_t k_new, Rng& rng) {
    if (existing.generator != Generator::GramSchmidt)
        throw ConfigError("gram_schmidt_extend requires a GramSchmidt set");
    const std::size_t d = existing.dim;
    const std::size_t n = existing.count();
    if (n + k_new > d)
        throw CapacityExceeded("gram_schmidt_extend: " + std::to_string(n + k_new) +
                               " rows exceed dimension " + std::to_string(d));

    PrototypeSet out(d, Generator::GramSchmidt);
    out.rows = Matrix(n + k_new, d);
    std::copy(existing.rows.data.begin(), existing.rows.data.end(), out.rows.data.begin());

    for (std::size_t k = 0; k < k_new; ++k) {
        double* row = out.rows.row(n + k);
        // Rejection loop: a draw nearly inside the current span has a tiny
        // residual; redraw rather than normalize noise.
        while (true) {
            fill_gaussian_row(row, d, rng);
            orthogonalize_against(row, out.rows, n + k);
            const double len = norm(row, d);
            if (len > 1e-8) {
                for (std::size_t c = 0; c < d; ++c) row[c] /= len;
                break;
            }
        }
    }
    return out;
}

PrototypeSet simplex_etf(std::size_t C, std::size_t d, Rng& rng) {
    if (C < 2) throw ConfigError("simplex_etf requires C >= 2");
    if (C > d + 1)
        throw CapacityExceeded("simplex_etf: " + std::to_string(C) + " rows exceed dimension " +
                               std::to_string(d) + " + 1");

    // Center the C standard basis vectors of R^C and rescale: pairwise inner
    // products become exactly -1/(C-1). The centered rows live in the
    // hyperplane orthogonal to the all-ones vector; a Householder reflection
    // taking 1/sqrt(C) to e_C exposes that hyperplane as the first C-1
    // coordinates, an isometry, so the identities carry over.
    const double inv_c = 1.0 / static_cast<double>(C);
    const double scale = 1.0 / std::sqrt(1.0 - inv_c);

    std::vector<double> w(C, 1.0 / std::sqrt(static_cast<double>(C)));
    w[C - 1] -= 1.0;
    const double wsq = dot(w.data(), w.data(), C);

    Matrix reduced(C, C - 1);
    std::vector<double> m(C);
    for (std::size_t i = 0; i < C; ++i) {
        for (std::size_t j = 0; j < C; ++j) m[j] = ((i == j) ? 1.0 : 0.0) - inv_c;
        for (std::size_t j = 0; j < C; ++j) m[j] *= scale;
        const double proj = 2.0 * dot(m.data(), w.data(), C) / wsq;
        for (std::size_t j = 0; j < C; ++j) m[j] -= proj * w[j];
        for (std::size_t j = 0; j + 1 < C; ++j) reduced(i, j) = m[j];
    }

    // Seeded random rotation of R^d applied to the zero-padded rows.
    Matrix q(d, d);
    for (std::size_t r = 0; r < d; ++r) {
        double* row = q.row(r);
        while (true) {
            fill_gaussian_row(row, d, rng);
            orthogonalize_against(row, q, r);
            const double len = norm(row, d);
            if (len > 1e-8) {
                for (std::size_t c = 0; c < d; ++c) row[c] /= len;
                break;
            }
        }
    }

    PrototypeSet out(d, Generator::SimplexEtf);
    out.rows = Matrix(C, d);
    for (std::size_t i = 0; i < C; ++i) {
        for (std::size_t c = 0; c < d; ++c) {
            double s = 0.0;
            for (std::size_t j = 0; j + 1 < C && j < d; ++j) s += reduced(i, j) * q(j, c);
            out.rows(i, c) = s;
        }
    }
    return out;
}

PrototypeSet muller_random(std::size_t C, std::size_t d, Rng& rng) {
    if (C < 1 || d < 1) throw ConfigError("muller_random requires C >= 1 and d >= 1");
    PrototypeSet out(d, Generator::Muller);
    out.rows = Matrix(C, d);
    for (std::size_t r = 0; r < C; ++r) fill_gaussian_row(out.rows.row(r), d, rng);
    normalize_rows(out.rows);
    return out;
}

PrototypeSet muller_extend(const PrototypeSet& existing, std::size_t k_new, Rng& rng) {
    PrototypeSet out(existing.dim, Generator::Muller);
    out.rows = Matrix(existing.count() + k_new, existing.dim);
    std::copy(existing.rows.data.begin(), existing.rows.data.end(), out.rows.data.begin());
    for (std::size_t k = 0; k < k_new; ++k) {
        double* row = out.rows.row(existing.count() + k);
        fill_gaussian_row(row, existing.dim, rng);
        const double len = std::max(norm(row, existing.dim), 1e-12);
        for (std::size_t c = 0; c < existing.dim; ++c) row[c] /= len;
    }
    return out;
}

namespace {

double pair_energy(const Matrix& rows) {
    double e = 0.0;
    for (std::size_t i = 0; i < rows.rows; ++i)
        for (std::size_t j = i + 1; j < rows.rows; ++j)
            e += 1.0 / std::sqrt(squared_distance(rows.row(i), rows.row(j), rows.cols));
    return e;
}

// Gradient of sum 1/r_ij with respect to row i: sum_j -(t_i - t_j)/r^3.
// Only rows with index >= first_free receive gradient (frozen prefix).
void energy_gradient(const Matrix& rows, std::size_t first_free, Matrix& grad) {
    std::fill(grad.data.begin(), grad.data.end(), 0.0);
    const std::size_t d = rows.cols;
    for (std::size_t i = 0; i < rows.rows; ++i) {
        for (std::size_t j = i + 1; j < rows.rows; ++j) {
            if (i < first_free && j < first_free) continue;
            const double r2 = squared_distance(rows.row(i), rows.row(j), d);
            const double inv_r3 = 1.0 / (r2 * std::sqrt(r2));
            const double* ti = rows.row(i);
            const double* tj = rows.row(j);
            for (std::size_t c = 0; c < d; ++c) {
                const double g = (ti[c] - tj[c]) * inv_r3;
                if (i >= first_free) grad(i, c) -= g;
                if (j >= first_free) grad(j, c) += g;
            }
        }
    }
}

MheResult descend(PrototypeSet start, std::size_t first_free, std::size_t iters, double step) {
    MheResult result;
    result.protos = std::move(start);
    Matrix& rows = result.protos.rows;
    const std::size_t d = rows.cols;

    double energy = pair_energy(rows);
    Matrix grad(rows.rows, d);
    Matrix candidate = rows;
    result.energy_trace.reserve(iters);

    for (std::size_t it = 0; it < iters; ++it) {
        energy_gradient(rows, first_free, grad);
        candidate.data = rows.data;
        for (std::size_t r = first_free; r < rows.rows; ++r) {
            double* row = candidate.row(r);
            const double* g = grad.row(r);
            for (std::size_t c = 0; c < d; ++c) row[c] -= step * g[c];
            const double len = std::max(norm(row, d), 1e-12);
            for (std::size_t c = 0; c < d; ++c) row[c] /= len;
        }
        const double new_energy = pair_energy(candidate);
        if (new_energy <= energy) {
            rows.data = candidate.data;
            energy = new_energy;
        } else {
            step *= 0.5; // reject, retry smaller next iteration
        }
        result.energy_trace.push_back(energy);
    }

    if (!result.energy_trace.empty()) {
        const std::size_t tail = std::max<std::size_t>(1, iters / 10);
        const std::size_t mark = result.energy_trace.size() - tail;
        const double start_e = mark == 0 ? result.energy_trace.front() : result.energy_trace[mark - 1];
        result.non_convergence = (start_e - result.energy_trace.back()) < 1e-9;
    }
    return result;
}

} // namespace

MheResult mhe_optimize(std::size_t C, std::size_t d, std::size_t iters, double step, Rng& rng) {
    if (C < 2) throw ConfigError("mhe_optimize requires C >= 2");
    PrototypeSet start = muller_random(C, d, rng);
    start.generator = Generator::Mhe;
    return descend(std::move(start), 0, iters, step);
}

MheResult mhe_extend(const PrototypeSet& existing, std::size_t k_new, std::size_t iters,
                     double step, Rng& rng) {
    PrototypeSet start = muller_extend(existing, k_new, rng);
    start.generator = Generator::Mhe;
    return descend(std::move(start), existing.count(), iters, step);
}

double min_cosine_distance(const PrototypeSet& protos) {
    if (protos.count() < 2) throw TooFewRows("min_cosine_distance needs at least 2 rows");
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < protos.count(); ++i)
        for (std::size_t j = i + 1; j < protos.count(); ++j)
            best = std::min(best, 1.0 - dot(protos.rows.row(i), protos.rows.row(j), protos.dim));
    return best;
}

} // namespace upcl
