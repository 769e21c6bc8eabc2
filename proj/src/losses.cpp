#include "mta/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace mta::losses {

namespace {

constexpr double kProbFloor = 1e-12;

void check_same_length(std::size_t a, std::size_t b, const char* what) {
    if (a != b) {
        throw std::invalid_argument(std::string(what) + ": length mismatch (" +
                                    std::to_string(a) + " vs " + std::to_string(b) + ")");
    }
}

std::vector<int> iota_indices(std::size_t n) {
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
}

void zero_grads(std::span<const FrameModelOutput> outputs, std::span<OutputGrad> grads) {
    if (grads.empty()) return;
    check_same_length(grads.size(), outputs.size(), "gradient buffer");
    for (std::size_t n = 0; n < grads.size(); ++n) {
        grads[n].expr_logits.fill(0.0);
        grads[n].va_logits.assign(outputs[n].va_logits.size(), 0.0);
    }
}

void require_expr(std::span<const InstanceLabels> labels, const std::vector<int>& idx) {
    for (int n : idx) {
        if (!labels[static_cast<std::size_t>(n)].expr) {
            throw std::invalid_argument("instance " + std::to_string(n) +
                                        " is missing the required expression label");
        }
        int c = labels[static_cast<std::size_t>(n)].expr->class_index;
        if (c < 0 || c >= kNumExprClasses) {
            throw std::invalid_argument("instance " + std::to_string(n) +
                                        " has expression class out of range: " + std::to_string(c));
        }
    }
}

void require_va(std::span<const InstanceLabels> labels, const std::vector<int>& idx) {
    for (int n : idx) {
        const auto& va = labels[static_cast<std::size_t>(n)].va;
        if (!va) {
            throw std::invalid_argument("instance " + std::to_string(n) +
                                        " is missing the required valence/arousal label");
        }
        if (!std::isfinite(va->valence) || !std::isfinite(va->arousal)) {
            throw std::invalid_argument("instance " + std::to_string(n) +
                                        " has a non-finite valence/arousal label");
        }
    }
}

// Softmax at temperature over a raw pointer row; stable via max subtraction.
void softmax_row(const double* logits, int len, double temperature, double* out) {
    double mx = logits[0];
    for (int i = 1; i < len; ++i) mx = std::max(mx, logits[i]);
    double sum = 0.0;
    for (int i = 0; i < len; ++i) {
        out[i] = std::exp((logits[i] - mx) / temperature);
        sum += out[i];
    }
    for (int i = 0; i < len; ++i) out[i] /= sum;
}

// Mean over idx of CE(one_hot(label), softmax(expr logits, 1)).
// d/dz = scale * (softmax - one_hot) / n.
double expr_supervision(std::span<const InstanceLabels> labels,
                        std::span<const FrameModelOutput> outputs, const std::vector<int>& idx,
                        std::span<OutputGrad> grads, double scale) {
    const double n = static_cast<double>(idx.size());
    double acc = 0.0;
    std::array<double, kNumExprClasses> q;
    for (int i : idx) {
        const auto& out = outputs[static_cast<std::size_t>(i)];
        softmax_row(out.expr_logits.data(), kNumExprClasses, 1.0, q.data());
        const int c = labels[static_cast<std::size_t>(i)].expr->class_index;
        acc += -std::log(std::max(q[static_cast<std::size_t>(c)], kProbFloor));
        if (!grads.empty()) {
            auto& g = grads[static_cast<std::size_t>(i)].expr_logits;
            for (int k = 0; k < kNumExprClasses; ++k) {
                g[static_cast<std::size_t>(k)] +=
                    scale * (q[static_cast<std::size_t>(k)] - (k == c ? 1.0 : 0.0)) / n;
            }
        }
    }
    return acc / n;
}

// VA supervision over idx: per dimension, mean CE over bins plus the
// (1/B)(1 - CCC) batch term on decoded predictions. The CCC term needs at
// least two instances; allow_singleton_ccc_skip drops it for smaller sets
// (used only by the shared-annotation subset path).
double va_supervision(std::span<const InstanceLabels> labels,
                      std::span<const FrameModelOutput> outputs, const std::vector<int>& idx,
                      const DistillationConfig& cfg, bool allow_singleton_ccc_skip,
                      std::span<OutputGrad> grads, double scale) {
    const int B = outputs[static_cast<std::size_t>(idx.front())].num_bins();
    const double n = static_cast<double>(idx.size());
    const bool with_ccc = idx.size() >= 2;
    if (!with_ccc && !allow_singleton_ccc_skip) {
        throw std::invalid_argument("VA supervision needs at least 2 instances (CCC undefined)");
    }

    double total = 0.0;
    std::vector<double> q(static_cast<std::size_t>(B));
    // Per-dimension softmaxes and decoded values are reused by the CCC part.
    std::vector<double> probs(idx.size() * 2 * static_cast<std::size_t>(B));
    std::vector<double> decoded(idx.size());
    std::vector<double> truth(idx.size());

    for (int dim = 0; dim < 2; ++dim) {
        double ce_acc = 0.0;
        for (std::size_t pos = 0; pos < idx.size(); ++pos) {
            const int i = idx[pos];
            const auto& out = outputs[static_cast<std::size_t>(i)];
            const auto& va = *labels[static_cast<std::size_t>(i)].va;
            const double y = dim == 0 ? va.valence : va.arousal;
            double* qp = probs.data() + (pos * 2 + static_cast<std::size_t>(dim)) *
                                            static_cast<std::size_t>(B);
            softmax_row(out.va_logits.data() + dim * B, B, 1.0, qp);
            const int bin = va_bin_index(y, B);
            ce_acc += -std::log(std::max(qp[bin], kProbFloor));
            double dec = 0.0;
            for (int k = 0; k < B; ++k) dec += qp[k] * va_bin_center(k, B);
            decoded[pos] = dec;
            truth[pos] = std::clamp(y, -1.0, 1.0);
            if (!grads.empty()) {
                auto& g = grads[static_cast<std::size_t>(i)];
                for (int k = 0; k < B; ++k) {
                    g.va_logits[static_cast<std::size_t>(dim * B + k)] +=
                        scale * (qp[k] - (k == bin ? 1.0 : 0.0)) / n;
                }
            }
        }
        total += ce_acc / n;

        if (!with_ccc) continue;
        // Population moments of truth vs decoded prediction.
        double mx = 0.0, my = 0.0;
        for (std::size_t pos = 0; pos < idx.size(); ++pos) {
            mx += truth[pos];
            my += decoded[pos];
        }
        mx /= n;
        my /= n;
        double vx = 0.0, vy = 0.0, sxy = 0.0;
        for (std::size_t pos = 0; pos < idx.size(); ++pos) {
            const double dx = truth[pos] - mx;
            const double dy = decoded[pos] - my;
            vx += dx * dx;
            vy += dy * dy;
            sxy += dx * dy;
        }
        vx /= n;
        vy /= n;
        sxy /= n;
        const double denom = vx + vy + (mx - my) * (mx - my) + cfg.ccc_epsilon;
        const double ccc_val = 2.0 * sxy / denom;
        total += (1.0 - ccc_val) / static_cast<double>(B);

        if (!grads.empty()) {
            for (std::size_t pos = 0; pos < idx.size(); ++pos) {
                const double dccc_dy =
                    2.0 / (n * denom * denom) *
                    ((truth[pos] - mx) * denom -
                     sxy * (2.0 * (decoded[pos] - my) - 2.0 * (mx - my)));
                const double dl_dy = -dccc_dy / static_cast<double>(B);
                const double* qp = probs.data() + (pos * 2 + static_cast<std::size_t>(dim)) *
                                                      static_cast<std::size_t>(B);
                auto& g = grads[static_cast<std::size_t>(idx[pos])];
                for (int k = 0; k < B; ++k) {
                    g.va_logits[static_cast<std::size_t>(dim * B + k)] +=
                        scale * dl_dy * qp[k] * (va_bin_center(k, B) - decoded[pos]);
                }
            }
        }
    }
    return total;
}

// Mean over idx of KL(softmax(t, T), softmax(s, T)) on one logit row.
// d/ds = scale * (softmax(s,T) - softmax(t,T)) / (T * n).
double kl_rows(const double* t, const double* s, int len, double temperature, double n,
               double* grad_row, double scale) {
    std::vector<double> p(static_cast<std::size_t>(len)), q(static_cast<std::size_t>(len));
    softmax_row(t, len, temperature, p.data());
    softmax_row(s, len, temperature, q.data());
    double kl = 0.0;
    for (int k = 0; k < len; ++k) {
        if (p[static_cast<std::size_t>(k)] > 0.0) {
            kl += p[static_cast<std::size_t>(k)] *
                  std::log(p[static_cast<std::size_t>(k)] /
                           std::max(q[static_cast<std::size_t>(k)], kProbFloor));
        }
    }
    if (grad_row != nullptr) {
        for (int k = 0; k < len; ++k) {
            grad_row[k] += scale * (q[static_cast<std::size_t>(k)] - p[static_cast<std::size_t>(k)]) /
                           (temperature * n);
        }
    }
    return kl;
}

double expr_distillation(std::span<const FrameModelOutput> teacher,
                         std::span<const FrameModelOutput> student, const std::vector<int>& idx,
                         const DistillationConfig& cfg, std::span<OutputGrad> grads, double scale) {
    const double n = static_cast<double>(idx.size());
    double acc = 0.0;
    for (int i : idx) {
        double* grow = grads.empty() ? nullptr : grads[static_cast<std::size_t>(i)].expr_logits.data();
        acc += kl_rows(teacher[static_cast<std::size_t>(i)].expr_logits.data(),
                       student[static_cast<std::size_t>(i)].expr_logits.data(), kNumExprClasses,
                       cfg.temperature, n, grow, scale);
    }
    return acc / n;
}

double va_distillation(std::span<const FrameModelOutput> teacher,
                       std::span<const FrameModelOutput> student, const std::vector<int>& idx,
                       const DistillationConfig& cfg, std::span<OutputGrad> grads, double scale) {
    const int B = student[static_cast<std::size_t>(idx.front())].num_bins();
    const double n = static_cast<double>(idx.size());
    double acc = 0.0;
    for (int i : idx) {
        for (int dim = 0; dim < 2; ++dim) {
            double* grow = grads.empty()
                               ? nullptr
                               : grads[static_cast<std::size_t>(i)].va_logits.data() + dim * B;
            acc += kl_rows(teacher[static_cast<std::size_t>(i)].va_logits.data() + dim * B,
                           student[static_cast<std::size_t>(i)].va_logits.data() + dim * B, B,
                           cfg.temperature, n, grow, scale);
        }
    }
    return acc / n;
}

double supervision_on(TaskId task, std::span<const InstanceLabels> labels,
                      std::span<const FrameModelOutput> outputs, const std::vector<int>& idx,
                      const DistillationConfig& cfg, bool allow_singleton_ccc_skip,
                      std::span<OutputGrad> grads, double scale) {
    switch (task) {
        case TaskId::kExpr:
            require_expr(labels, idx);
            return expr_supervision(labels, outputs, idx, grads, scale);
        case TaskId::kVa:
            require_va(labels, idx);
            return va_supervision(labels, outputs, idx, cfg, allow_singleton_ccc_skip, grads, scale);
        case TaskId::kExprVa:
            require_expr(labels, idx);
            require_va(labels, idx);
            return expr_supervision(labels, outputs, idx, grads, scale) +
                   va_supervision(labels, outputs, idx, cfg, allow_singleton_ccc_skip, grads, scale);
    }
    throw std::invalid_argument("unknown task id");
}

double distillation_on(TaskId task, std::span<const FrameModelOutput> teacher,
                       std::span<const FrameModelOutput> student, const std::vector<int>& idx,
                       const DistillationConfig& cfg, std::span<OutputGrad> grads, double scale) {
    switch (task) {
        case TaskId::kExpr:
            return expr_distillation(teacher, student, idx, cfg, grads, scale);
        case TaskId::kVa:
            return va_distillation(teacher, student, idx, cfg, grads, scale);
        case TaskId::kExprVa:
            return expr_distillation(teacher, student, idx, cfg, grads, scale) +
                   va_distillation(teacher, student, idx, cfg, grads, scale);
    }
    throw std::invalid_argument("unknown task id");
}

void validate_pair(std::span<const FrameModelOutput> teacher,
                   std::span<const FrameModelOutput> student) {
    check_same_length(teacher.size(), student.size(), "teacher/student outputs");
    for (std::size_t n = 0; n < teacher.size(); ++n) {
        check_same_length(teacher[n].va_logits.size(), student[n].va_logits.size(),
                          "teacher/student bin logits");
    }
}

void check_bins(std::span<const FrameModelOutput> outputs, const DistillationConfig& cfg) {
    for (const auto& o : outputs) {
        if (o.num_bins() != cfg.num_bins) {
            throw std::invalid_argument("output bin count " + std::to_string(o.num_bins()) +
                                        " does not match configured num_bins " +
                                        std::to_string(cfg.num_bins));
        }
    }
}

TaskId part_task(int part) { return static_cast<TaskId>(part + 1); }

}  // namespace

std::vector<double> softmax_temperature(std::span<const double> logits, double temperature) {
    if (logits.empty()) throw std::invalid_argument("softmax needs at least one logit");
    if (!(temperature > 0.0)) throw std::invalid_argument("softmax temperature must be > 0");
    for (double v : logits) {
        if (!std::isfinite(v)) throw std::invalid_argument("softmax logits must be finite");
    }
    std::vector<double> out(logits.size());
    softmax_row(logits.data(), static_cast<int>(logits.size()), temperature, out.data());
    return out;
}

double cross_entropy(std::span<const double> target, std::span<const double> predicted) {
    check_same_length(target.size(), predicted.size(), "cross_entropy");
    double acc = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) {
        acc -= target[i] * std::log(std::max(predicted[i], kProbFloor));
    }
    return acc;
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
    check_same_length(p.size(), q.size(), "kl_divergence");
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] > 0.0) acc += p[i] * std::log(p[i] / std::max(q[i], kProbFloor));
    }
    return acc;
}

double ccc(std::span<const double> truth, std::span<const double> prediction, double epsilon) {
    check_same_length(truth.size(), prediction.size(), "ccc");
    if (truth.size() < 2) throw std::invalid_argument("ccc needs at least 2 points");
    const double n = static_cast<double>(truth.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        mx += truth[i];
        my += prediction[i];
    }
    mx /= n;
    my /= n;
    double vx = 0.0, vy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const double dx = truth[i] - mx;
        const double dy = prediction[i] - my;
        vx += dx * dx;
        vy += dy * dy;
        sxy += dx * dy;
    }
    return 2.0 * (sxy / n) / (vx / n + vy / n + (mx - my) * (mx - my) + epsilon);
}

int va_bin_index(double value, int num_bins) {
    if (num_bins < 2) throw std::invalid_argument("num_bins must be >= 2");
    const double v = std::clamp(value, -1.0, 1.0);
    const int bin = static_cast<int>(std::floor((v + 1.0) / 2.0 * num_bins));
    return std::min(bin, num_bins - 1);
}

std::vector<double> discretize_va(double value, int num_bins) {
    std::vector<double> one_hot(static_cast<std::size_t>(num_bins), 0.0);
    one_hot[static_cast<std::size_t>(va_bin_index(value, num_bins))] = 1.0;
    return one_hot;
}

double va_bin_center(int bin, int num_bins) {
    return -1.0 + static_cast<double>(2 * bin + 1) / static_cast<double>(num_bins);
}

double decode_va(std::span<const double> bin_probs) {
    const int B = static_cast<int>(bin_probs.size());
    if (B < 2) throw std::invalid_argument("decode_va needs at least 2 bins");
    double acc = 0.0;
    for (int k = 0; k < B; ++k) acc += bin_probs[static_cast<std::size_t>(k)] * va_bin_center(k, B);
    return acc;
}

double supervision_loss(TaskId task, std::span<const InstanceLabels> labels,
                        std::span<const FrameModelOutput> outputs, const DistillationConfig& cfg,
                        std::span<OutputGrad> grads) {
    check_same_length(labels.size(), outputs.size(), "supervision labels/outputs");
    if (outputs.empty()) throw std::invalid_argument("supervision loss on empty batch");
    check_bins(outputs, cfg);
    zero_grads(outputs, grads);
    return supervision_on(task, labels, outputs, iota_indices(outputs.size()), cfg,
                          /*allow_singleton_ccc_skip=*/false, grads, 1.0);
}

double distillation_loss(TaskId task, std::span<const FrameModelOutput> teacher,
                         std::span<const FrameModelOutput> student, const DistillationConfig& cfg,
                         std::span<OutputGrad> student_grads) {
    validate_pair(teacher, student);
    if (student.empty()) throw std::invalid_argument("distillation loss on empty batch");
    check_bins(student, cfg);
    zero_grads(student, student_grads);
    return distillation_on(task, teacher, student, iota_indices(student.size()), cfg, student_grads,
                           1.0);
}

double combined_sample_loss(TaskId task, std::span<const InstanceLabels> labels,
                            std::span<const FrameModelOutput> teacher,
                            std::span<const FrameModelOutput> student,
                            const DistillationConfig& cfg, std::span<OutputGrad> student_grads) {
    validate_pair(teacher, student);
    check_same_length(labels.size(), student.size(), "combined labels/outputs");
    if (student.empty()) throw std::invalid_argument("combined loss on empty batch");
    zero_grads(student, student_grads);
    const auto idx = iota_indices(student.size());
    const double lambda = cfg.lambda_weight;
    // The degenerate weightings skip the dead term entirely so that lambda=1
    // reduces exactly to supervision and lambda=0 exactly to distillation.
    double sup = 0.0, dist = 0.0;
    if (lambda > 0.0) {
        sup = supervision_on(task, labels, student, idx, cfg, false, student_grads, lambda);
    }
    if (lambda < 1.0) {
        dist = distillation_on(task, teacher, student, idx, cfg, student_grads, 1.0 - lambda);
    }
    if (lambda == 1.0) return sup;
    if (lambda == 0.0) return dist;
    return lambda * sup + (1.0 - lambda) * dist;
}

LossBreakdown teacher_batch_loss(const BatchLabels& labels, const BatchOutputs& outputs,
                                 const DistillationConfig& cfg, TaskMode mode, BatchGrads* grads) {
    const int num_parts = mode == TaskMode::kThreeTask ? 3 : 2;
    LossBreakdown bd;
    for (int part = 0; part < 3; ++part) {
        if (grads != nullptr) {
            zero_grads(outputs.parts[static_cast<std::size_t>(part)],
                       grads->parts[static_cast<std::size_t>(part)]);
        }
    }
    for (int part = 0; part < num_parts; ++part) {
        const auto& l = labels.parts[static_cast<std::size_t>(part)];
        const auto& o = outputs.parts[static_cast<std::size_t>(part)];
        check_same_length(l.size(), o.size(), "part labels/outputs");
        if (o.empty()) {
            throw std::invalid_argument("teacher batch loss: part " + std::to_string(part + 1) +
                                        " is empty");
        }
        check_bins(o, cfg);
        std::span<OutputGrad> g =
            grads != nullptr ? std::span<OutputGrad>(grads->parts[static_cast<std::size_t>(part)])
                             : std::span<OutputGrad>{};
        const double sup = supervision_on(part_task(part), l, o, iota_indices(o.size()), cfg, false,
                                          g, 1.0);
        bd.per_task[part_task(part)] = sup;
        bd.total += sup;
    }
    bd.supervision_part = bd.total;
    bd.supervision_raw = bd.total;
    return bd;
}

LossBreakdown student_batch_loss(const BatchLabels& labels, const BatchOutputs& teacher,
                                 const BatchOutputs& student, const DistillationConfig& cfg,
                                 bool use_shared_annotations, TaskMode mode, BatchGrads* grads) {
    const int num_parts = mode == TaskMode::kThreeTask ? 3 : 2;
    const double lambda = cfg.lambda_weight;
    LossBreakdown bd;
    for (int part = 0; part < 3; ++part) {
        if (grads != nullptr) {
            zero_grads(student.parts[static_cast<std::size_t>(part)],
                       grads->parts[static_cast<std::size_t>(part)]);
        }
    }

    for (int part = 0; part < num_parts; ++part) {
        const auto& l = labels.parts[static_cast<std::size_t>(part)];
        const auto& t = teacher.parts[static_cast<std::size_t>(part)];
        const auto& s = student.parts[static_cast<std::size_t>(part)];
        check_same_length(l.size(), s.size(), "part labels/outputs");
        validate_pair(t, s);
        if (s.empty()) {
            throw std::invalid_argument("student batch loss: part " + std::to_string(part + 1) +
                                        " is empty");
        }
        check_bins(s, cfg);
        std::span<OutputGrad> g =
            grads != nullptr ? std::span<OutputGrad>(grads->parts[static_cast<std::size_t>(part)])
                             : std::span<OutputGrad>{};
        const auto all = iota_indices(s.size());
        const TaskId primary = part_task(part);

        double sup = lambda > 0.0 ? supervision_on(primary, l, s, all, cfg, false, g, lambda) : 0.0;
        double dist =
            lambda < 1.0 ? distillation_on(primary, t, s, all, cfg, g, 1.0 - lambda) : 0.0;
        double part_term = lambda * sup + (1.0 - lambda) * dist;
        bd.supervision_raw += sup;
        bd.distillation_raw += dist;
        bd.per_task[primary] += part_term;
        bd.total += part_term;

        if (part >= 2) continue;  // the combined part has no secondary task
        const TaskId secondary = part == 0 ? TaskId::kVa : TaskId::kExpr;

        std::vector<int> with_label;
        if (use_shared_annotations) {
            for (std::size_t n = 0; n < l.size(); ++n) {
                const bool has = secondary == TaskId::kVa ? l[n].va.has_value()
                                                          : l[n].expr.has_value();
                if (has) with_label.push_back(static_cast<int>(n));
            }
        }

        double sec_term = 0.0;
        if (with_label.empty()) {
            // Eq. 9 / the "is NA" branch of Eq. 10: pure distillation, weighted
            // into the (1 - lambda) side of the blend.
            if (lambda < 1.0) {
                const double d = distillation_on(secondary, t, s, all, cfg, g, 1.0 - lambda);
                bd.distillation_raw += d;
                sec_term = (1.0 - lambda) * d;
            }
        } else if (with_label.size() == s.size()) {
            // Every instance carries the secondary ground truth.
            double ssup = lambda > 0.0
                              ? supervision_on(secondary, l, s, all, cfg, true, g, lambda)
                              : 0.0;
            double sdist =
                lambda < 1.0 ? distillation_on(secondary, t, s, all, cfg, g, 1.0 - lambda) : 0.0;
            bd.supervision_raw += ssup;
            bd.distillation_raw += sdist;
            sec_term = lambda * ssup + (1.0 - lambda) * sdist;
        } else {
            // Mixed batch: blend on the labeled subset, distillation on the
            // rest, each instance weighted equally within the part.
            std::vector<int> without_label;
            for (std::size_t n = 0; n < l.size(); ++n) {
                if (!std::binary_search(with_label.begin(), with_label.end(), static_cast<int>(n))) {
                    without_label.push_back(static_cast<int>(n));
                }
            }
            const double w = static_cast<double>(with_label.size()) / static_cast<double>(s.size());
            double ssup = 0.0, sdist_l = 0.0, sdist_u = 0.0;
            if (lambda > 0.0) {
                ssup = supervision_on(secondary, l, s, with_label, cfg, true, g, lambda * w);
            }
            if (lambda < 1.0) {
                sdist_l = distillation_on(secondary, t, s, with_label, cfg, g, (1.0 - lambda) * w);
                sdist_u =
                    distillation_on(secondary, t, s, without_label, cfg, g, (1.0 - lambda) * (1.0 - w));
            }
            bd.supervision_raw += w * ssup;
            bd.distillation_raw += w * sdist_l + (1.0 - w) * sdist_u;
            sec_term = w * (lambda * ssup + (1.0 - lambda) * sdist_l) +
                       (1.0 - w) * (1.0 - lambda) * sdist_u;
        }
        bd.per_task[secondary] += sec_term;
        bd.total += sec_term;
    }

    bd.supervision_part = lambda * bd.supervision_raw;
    bd.distillation_part = (1.0 - lambda) * bd.distillation_raw;
    return bd;
}

}  // namespace mta::losses
