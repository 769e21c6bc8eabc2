#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

namespace mta {

inline constexpr int kNumExprClasses = 7;

// The three training tasks. The combined task reuses the EXPR and VA output
// heads; no third head exists.
enum class TaskId : int { kExpr = 1, kVa = 2, kExprVa = 3 };

// Which tasks a batch loss sums over. kTwoTask drops the combined part
// (ablation mode); kThreeTask is the full objective.
enum class TaskMode { kTwoTask, kThreeTask };

struct ExprLabel {
    int class_index = 0;  // 0..6: neutral, anger, disgust, fear, happiness, sadness, surprise

    std::array<double, kNumExprClasses> one_hot() const {
        std::array<double, kNumExprClasses> v{};
        v[static_cast<std::size_t>(class_index)] = 1.0;
        return v;
    }
};

struct VaLabel {
    double valence = 0.0;  // [-1, 1]
    double arousal = 0.0;  // [-1, 1]
};

// Logits emitted by either network for one instance. va_logits holds the two
// B-way bin rows back to back: row 0 valence, row 1 arousal.
struct FrameModelOutput {
    std::array<double, kNumExprClasses> expr_logits{};
    std::vector<double> va_logits;

    int num_bins() const { return static_cast<int>(va_logits.size() / 2); }
    std::span<const double> va_row(int dim) const {
        return {va_logits.data() + static_cast<std::size_t>(dim) * va_logits.size() / 2,
                va_logits.size() / 2};
    }
};

// Gradient w.r.t. one instance's logits; same layout as the output itself.
using OutputGrad = FrameModelOutput;

struct DistillationConfig {
    double lambda_weight = 0.6;  // ground truth weighted slightly above soft labels
    double temperature = 2.0;
    int num_bins = 20;
    double ccc_epsilon = 1e-8;
};

// Labels attached to one instance. Parts 1/2 may additionally carry the other
// task's label (shared annotations).
struct InstanceLabels {
    std::optional<ExprLabel> expr;
    std::optional<VaLabel> va;
};

struct LossBreakdown {
    double total = 0.0;
    std::map<TaskId, double> per_task;
    double supervision_part = 0.0;    // lambda-weighted supervision contribution
    double distillation_part = 0.0;   // (1-lambda)-weighted distillation contribution
    double supervision_raw = 0.0;     // unweighted sums, for the blend identity
    double distillation_raw = 0.0;
};

// Per-part instance lists for one optimizer step: parts[0] Mixed EXPR,
// parts[1] Mixed VA, parts[2] EXPR_VA.
struct BatchLabels {
    std::array<std::vector<InstanceLabels>, 3> parts;
};
struct BatchOutputs {
    std::array<std::vector<FrameModelOutput>, 3> parts;
};
struct BatchGrads {
    std::array<std::vector<OutputGrad>, 3> parts;
};

namespace losses {

std::vector<double> softmax_temperature(std::span<const double> logits, double temperature);
double cross_entropy(std::span<const double> target, std::span<const double> predicted);
double kl_divergence(std::span<const double> p, std::span<const double> q);
double ccc(std::span<const double> truth, std::span<const double> prediction,
           double epsilon = 1e-8);

int va_bin_index(double value, int num_bins);
std::vector<double> discretize_va(double value, int num_bins);
double va_bin_center(int bin, int num_bins);
double decode_va(std::span<const double> bin_probs);

// Supervision losses (ground truth only). Mean over instances within the
// batch; the VA CCC term is a batch statistic added once per dimension with
// weight 1/B. When `grads` is non-null it must be sized like `outputs` and is
// overwritten with d loss / d logits.
double supervision_loss(TaskId task, std::span<const InstanceLabels> labels,
                        std::span<const FrameModelOutput> outputs,
                        const DistillationConfig& cfg,
                        std::span<OutputGrad> grads = {});

// Softened teacher-vs-student KL, mean over instances. Gradients are w.r.t.
// the student logits; the teacher is fixed.
double distillation_loss(TaskId task, std::span<const FrameModelOutput> teacher,
                         std::span<const FrameModelOutput> student,
                         const DistillationConfig& cfg,
                         std::span<OutputGrad> student_grads = {});

// lambda * supervision(student) + (1 - lambda) * distillation(teacher, student).
double combined_sample_loss(TaskId task, std::span<const InstanceLabels> labels,
                            std::span<const FrameModelOutput> teacher,
                            std::span<const FrameModelOutput> student,
                            const DistillationConfig& cfg,
                            std::span<OutputGrad> student_grads = {});

// Sum of per-part supervision losses. Two-task mode omits the combined part.
LossBreakdown teacher_batch_loss(const BatchLabels& labels, const BatchOutputs& outputs,
                                 const DistillationConfig& cfg,
                                 TaskMode mode = TaskMode::kThreeTask,
                                 BatchGrads* grads = nullptr);

// Full student objective: the per-part lambda blend plus, for parts 1 and 2,
// a secondary term under the other single task's head. With
// use_shared_annotations off (or when no instance carries the secondary
// label) the secondary term is pure distillation; with it on, instances
// carrying the secondary ground truth get the full lambda blend instead.
LossBreakdown student_batch_loss(const BatchLabels& labels, const BatchOutputs& teacher,
                                 const BatchOutputs& student, const DistillationConfig& cfg,
                                 bool use_shared_annotations,
                                 TaskMode mode = TaskMode::kThreeTask,
                                 BatchGrads* grads = nullptr);

}  // namespace losses
}  // namespace mta
