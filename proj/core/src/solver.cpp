#include "defuse/solver.hpp"

#include "defuse/rotation.hpp"

#include <Eigen/SparseCholesky>
#ifdef DEFUSE_HAVE_CHOLMOD
#include <Eigen/CholmodSupport>
#endif

#include <algorithm>
#include <span>
#include <cmath>
#include <stdexcept>

namespace defuse {
namespace {

#ifdef DEFUSE_HAVE_CHOLMOD
using SparseFactor = Eigen::CholmodSupernodalLLT<Eigen::SparseMatrix<double>>;
void quiet(SparseFactor& f) { f.cholmod().print = 0; }
#else
using SparseFactor = Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>;
void quiet(SparseFactor&) {}
#endif

std::array<double, kTermCount> weighted_terms(const Residuals& res) {
    std::array<double, kTermCount> out{};
    for (std::size_t t = 0; t < kTermCount; ++t) {
        out[t] = res.weights[t] * res.energies[t];
    }
    return out;
}

// Lower-triangular structural superset of J^T J for every state reachable in this solve: node
// skinning sets and graph edges do not change while the solver runs, so one symbolic analysis
// serves all steps. Variables are grouped into segments (12 per node, then 6 for the global
// pose); every stored block is a full segment x segment block, diagonal blocks included, so
// all columns of a segment share one row structure.
Eigen::SparseMatrix<double> normal_pattern(const WarpField& field, const FrameInputs& inputs) {
    const auto m = static_cast<int>(field.nodes.size());
    std::vector<std::vector<int>> lower(static_cast<std::size_t>(m) + 1);  // lower[k]: row segments >= k
    auto link = [&](std::span<const int> ids) {
        for (int a : ids) {
            for (int b : ids) {
                if (a >= b) {
                    lower[b].push_back(a);
                }
            }
            lower[a].push_back(m);
        }
    };
    for (const auto& skin : inputs.skins) {
        link(skin.node_ids);
    }
    for (const auto& c : inputs.correspondences) {
        link(compute_skinning(c.model_point, field).node_ids);
    }
    for (int j = 0; j < m; ++j) {
        lower[j].push_back(j);
        for (int k : field.nodes[j].neighbors) {
            lower[std::min(j, k)].push_back(std::max(j, k));
        }
    }
    lower[m].push_back(m);

    auto width = [m](int seg) { return seg < m ? 12 : 6; };
    std::vector<Triplet> triplets;
    for (int k = 0; k <= m; ++k) {
        auto& rows = lower[k];
        std::sort(rows.begin(), rows.end());
        rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
        for (int j : rows) {
            for (int a = 0; a < width(j); ++a) {
                for (int b = 0; b < width(k); ++b) {
                    triplets.emplace_back(12 * j + a, 12 * k + b, 1.0);
                }
            }
        }
    }
    const int n = 12 * m + 6;
    Eigen::SparseMatrix<double> p(n, n);
    p.setFromTriplets(triplets.begin(), triplets.end(), [](double a, double) { return a; });
    p.makeCompressed();
    return p;
}

// Accumulates the lower triangle of J^T J and the full J^T r directly into the fixed pattern,
// one residual row at a time.
class NormalAssembler {
public:
    NormalAssembler(const Eigen::SparseMatrix<double>& pattern, int nodes) : h_(pattern), nodes_(nodes) {
        // Offsets of each row segment inside the columns of a column segment.
        offsets_.resize(static_cast<std::size_t>(nodes) + 1);
        for (int k = 0; k <= nodes; ++k) {
            const int c = base(k);
            const int start = h_.outerIndexPtr()[c];
            for (int pos = start; pos < h_.outerIndexPtr()[c + 1]; ++pos) {
                const int r = h_.innerIndexPtr()[pos];
                if (r == base(segment(r))) {
                    offsets_[k].push_back({segment(r), pos - start});
                }
            }
        }
        const auto n = static_cast<int>(h_.cols());
        diag_pos_.resize(n);
        for (int i = 0; i < n; ++i) {
            diag_pos_[i] = h_.outerIndexPtr()[i] + offset(segment(i), segment(i)) + (i - base(segment(i)));
        }
    }

    // Rows are visited sorted by column set; each run of rows sharing one set (points with the same
    // skinning nodes) is summed into a dense lower triangle and scattered once.
    void accumulate(const Eigen::SparseMatrix<double, Eigen::RowMajor>& jac, const Eigen::VectorXd& r,
                    Eigen::VectorXd& grad) {
        double* h = h_.valuePtr();
        std::fill(h, h + h_.nonZeros(), 0.0);
        grad.setZero(h_.cols());
        const int* outer = jac.outerIndexPtr();
        const int* cols = jac.innerIndexPtr();
        const double* vals = jac.valuePtr();
        run_cols_.clear();
        order_.resize(static_cast<std::size_t>(jac.rows()));
        for (std::size_t i = 0; i < order_.size(); ++i) {
            order_[i] = static_cast<int>(i);
        }
        std::stable_sort(order_.begin(), order_.end(), [&](int a, int b) {
            return std::lexicographical_compare(cols + outer[a], cols + outer[a + 1], cols + outer[b],
                                                cols + outer[b + 1]);
        });
        for (const int i : order_) {
            const int begin = outer[i];
            const int end = outer[i + 1];
            const double ri = r(i);
            for (int q = begin; q < end; ++q) {
                grad(cols[q]) += vals[q] * ri;
            }
            const int n = end - begin;
            if (n == 0) {
                continue;
            }
            if (n != static_cast<int>(run_cols_.size()) || !std::equal(run_cols_.begin(), run_cols_.end(), cols + begin)) {
                flush();
                run_cols_.assign(cols + begin, cols + end);
                local_.assign(static_cast<std::size_t>(n) * n, 0.0);
            }
            const double* v = vals + begin;
            for (int q = 0; q < n; ++q) {
                double* col = local_.data() + static_cast<std::size_t>(q) * n;
                const double vq = v[q];
                for (int p = q; p < n; ++p) {
                    col[p] += v[p] * vq;
                }
            }
        }
        flush();
    }

    const Eigen::SparseMatrix<double>& matrix() const { return h_; }
    int diagonal_position(int i) const { return diag_pos_[i]; }

private:
    struct Entry {
        int seg;
        int offset;
    };
    struct RowSegment {
        int seg;
        int begin;
        int end;
    };

    // Scatters the run's lower triangle; inside a diagonal segment block the upper half is
    // read from its mirror.
    void flush() {
        const int n = static_cast<int>(run_cols_.size());
        if (n == 0) {
            return;
        }
        segs_.clear();
        for (int k = 0; k < n; ++k) {
            const int seg = segment(run_cols_[k]);
            if (segs_.empty() || segs_.back().seg != seg) {
                segs_.push_back({seg, k, k});
            }
            segs_.back().end = k + 1;
        }
        double* h = h_.valuePtr();
        const int* hcol = h_.outerIndexPtr();
        const double* l = local_.data();
        for (std::size_t sq = 0; sq < segs_.size(); ++sq) {
            const auto& cs = segs_[sq];
            for (std::size_t sp = sq; sp < segs_.size(); ++sp) {
                const auto& rs = segs_[sp];
                const int off = offset(cs.seg, rs.seg) - base(rs.seg);
                for (int q = cs.begin; q < cs.end; ++q) {
                    double* col = h + hcol[run_cols_[q]] + off;
                    for (int p = rs.begin; p < rs.end; ++p) {
                        col[run_cols_[p]] += p >= q ? l[static_cast<std::size_t>(q) * n + p]
                                                    : l[static_cast<std::size_t>(p) * n + q];
                    }
                }
            }
        }
        run_cols_.clear();
    }

    int segment(int col) const { return col < 12 * nodes_ ? col / 12 : nodes_; }
    static int base(int seg) { return 12 * seg; }

    int offset(int col_seg, int row_seg) const {
        const auto& list = offsets_[col_seg];
        const auto it = std::lower_bound(list.begin(), list.end(), row_seg,
                                         [](const Entry& e, int s) { return e.seg < s; });
        if (it == list.end() || it->seg != row_seg) {
            throw std::logic_error("normal equations: Jacobian entry outside the symbolic pattern");
        }
        return it->offset;
    }

    Eigen::SparseMatrix<double> h_;
    int nodes_;
    std::vector<std::vector<Entry>> offsets_;
    std::vector<int> diag_pos_;
    std::vector<RowSegment> segs_;
    std::vector<double> local_;  // n x n column-major, lower triangle used
    std::vector<int> run_cols_;
    std::vector<int> order_;
};

}  // namespace

void SolverConfig::validate() const {
    if (max_iterations < 1) {
        throw std::invalid_argument("max_iterations must be >= 1");
    }
    if (!(damping_up > 1.0) || !(damping_down > 0.0 && damping_down < 1.0)) {
        throw std::invalid_argument("damping factors must satisfy up > 1 and 0 < down < 1");
    }
    if (!(initial_damping > 0.0) || !(convergence_tol > 0.0) || !(step_tol > 0.0)) {
        throw std::invalid_argument("damping and tolerances must be positive");
    }
}

std::string_view termination_name(Termination t) {
    switch (t) {
        case Termination::converged: return "converged";
        case Termination::max_iterations: return "max_iterations";
        case Termination::stalled: return "stalled";
    }
    return "?";
}

void apply_increment(WarpField& field, const Eigen::VectorXd& delta) {
    if (static_cast<std::size_t>(delta.size()) != field.variable_count()) {
        throw std::invalid_argument("apply_increment: size mismatch");
    }
    for (std::size_t j = 0; j < field.nodes.size(); ++j) {
        auto& node = field.nodes[j];
        const auto col = static_cast<Eigen::Index>(12 * j);
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) {
                node.affine(r, c) += delta(col + 3 * r + c);
            }
            node.translation(r) += delta(col + 9 + r);
        }
    }
    const auto g = static_cast<Eigen::Index>(global_column(field));
    field.rotation = orthonormalize(so3_exp(delta.segment<3>(g)) * field.rotation);
    field.translation += delta.segment<3>(g + 3);
}

SolveResult solve(const WarpField& field, const FrameInputs& inputs, const EnergyParams& params,
                  const SolverConfig& config) {
    config.validate();
    SolveResult result{field, {}};
    auto& report = result.report;

    Residuals res = assemble(inputs, result.field, params);
    if (res.values.size() == 0) {
        throw std::invalid_argument("solve: problem has no residuals");
    }
    double energy = res.total();
    report.initial_energy = energy;
    report.trace.push_back(energy);
    report.termination = Termination::max_iterations;

    double damping = config.initial_damping;
    const auto n = static_cast<Eigen::Index>(result.field.variable_count());
    const Eigen::SparseMatrix<double> pattern = normal_pattern(result.field, inputs);
    NormalAssembler normal(pattern, static_cast<int>(result.field.nodes.size()));
    SparseFactor ldlt;
    quiet(ldlt);
    ldlt.analyzePattern(pattern);
    Eigen::VectorXd grad;
    Eigen::SparseMatrix<double> a = pattern;  // damped copy of the normal matrix, same structure

    for (int it = 1; it <= config.max_iterations; ++it) {
        normal.accumulate(res.jacobian, res.values, grad);
        const Eigen::SparseMatrix<double>& h = normal.matrix();
        const double grad_norm = grad.norm();
        if (grad_norm <= 1e-14 * std::max(1.0, energy)) {
            report.termination = Termination::converged;
            break;
        }
        report.iterations = it;

        Eigen::VectorXd diag = h.diagonal();
        const double floor = 1e-9 * std::max(1.0, diag.maxCoeff());
        diag = diag.cwiseMax(floor);

        bool accepted = false;
        int rejected = 0;
        Eigen::VectorXd delta;
        WarpField trial_field;
        Residuals trial;
        double trial_energy = energy;
        while (damping <= config.max_damping) {
            std::copy(h.valuePtr(), h.valuePtr() + h.nonZeros(), a.valuePtr());
            for (Eigen::Index i = 0; i < n; ++i) {
                a.valuePtr()[normal.diagonal_position(static_cast<int>(i))] += damping * diag(i);
            }
            ldlt.factorize(a);
            bool ok = ldlt.info() == Eigen::Success;
            if (ok) {
                delta = ldlt.solve(-grad);
                Eigen::VectorXd lin = a.selfadjointView<Eigen::Lower>() * delta + grad;
                if (lin.norm() > 1e-8 * grad_norm) {
                    delta += ldlt.solve(-lin);
                    lin = a.selfadjointView<Eigen::Lower>() * delta + grad;
                }
                ok = delta.allFinite() && lin.norm() <= 1e-8 * grad_norm;
            }
            if (ok) {
                trial_field = result.field;
                apply_increment(trial_field, delta);
                trial = assemble(inputs, trial_field, params, nullptr, false);
                trial_energy = trial.total();
                if (trial.values.size() > 0 && trial_energy <= energy) {
                    accepted = true;
                    break;
                }
            }
            ++rejected;
            damping *= config.damping_up;
        }
        if (!accepted) {
            report.termination = Termination::stalled;
            break;
        }

        const double decrease = energy - trial_energy;
        result.field = std::move(trial_field);
        res = assemble(inputs, result.field, params, &trial.visible, true);
        energy = trial_energy;
        report.trace.push_back(energy);
        report.last_step_norm = delta.norm();
        report.history.push_back({it, energy, damping, rejected, weighted_terms(res)});
        damping = std::max(damping * config.damping_down, 1e-12);

        if (decrease <= config.convergence_tol * std::max(energy + decrease, 1e-300) ||
            report.last_step_norm < config.step_tol) {
            report.termination = Termination::converged;
            break;
        }
    }

    report.final_energy = energy;
    report.final_terms = weighted_terms(res);
    report.visible_points = res.visible.size();
    report.pose_fallback = res.pose_fallback;
    return result;
}

}  // namespace defuse
