#pragma once

// Multi-caption contrastive task loss, inverse feature distillation, and the
// combined objective. Graph builders drive training; the plain-value API
// wraps them for callers that just want numbers.
//
// All losses are batch means rather than raw sums, so magnitudes are
// batch-size invariant.

#include "comchain/graph.hpp"
#include "comchain/tensor.hpp"

#include <cstdint>

namespace comchain {

struct LossError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Graph builders

template <typename F>
struct TaskLossNodes {
    int t2v = -1;
    int v2t = -1;
    int task = -1;
};

// image_feats (N, d) and text_feats (N*M, d) are unnormalized projections;
// normalization happens here. `logit_scale` must be a scalar node holding the
// multiplier on cosine similarities (1/tau), e.g. ops::exp_clamped of the
// learnable log scale, or a plain input for a fixed temperature.
template <typename F>
TaskLossNodes<F> build_task_loss(Graph<F>& g, int image_feats, int text_feats, int64_t captions,
                                 int logit_scale) {
    const int64_t n = g.value(image_feats).shape[0];
    const int64_t nm = g.value(text_feats).shape[0];
    if (captions < 1 || nm != n * captions)
        throw LossError("task loss: " + std::to_string(nm) + " captions for " +
                        std::to_string(n) + " images with M=" + std::to_string(captions));
    int vn = ops::l2_normalize(g, image_feats);
    int tn = ops::l2_normalize(g, text_feats);
    int sims = ops::matmul(g, tn, ops::transpose(g, vn));  // (N*M, N) cosines
    std::vector<int64_t> targets(static_cast<size_t>(nm));
    for (int64_t r = 0; r < nm; ++r) targets[static_cast<size_t>(r)] = r / captions;
    TaskLossNodes<F> nodes;
    int logits_t2v = ops::scale_by(g, sims, logit_scale);
    nodes.t2v = ops::mean(g, ops::nll_rows(g, logits_t2v, std::move(targets)));
    int logits_v2t = ops::scale_by(g, ops::transpose(g, sims), logit_scale);
    nodes.v2t = ops::mean(g, ops::nll_group_rows(g, logits_v2t, captions));
    nodes.task = ops::scale(g, ops::add(g, nodes.t2v, nodes.v2t), 0.5);
    return nodes;
}

// alpha * mean over the batch of ||teacher_b - (student_b * W + b)||^2.
// Teacher and student features are pre-normalization projection outputs.
template <typename F>
int build_ifd_loss(Graph<F>& g, int teacher_feats, int student_feats, int transform_w,
                   int transform_b, double alpha) {
    // copy sizes out: node references die when the graph vector grows
    const int64_t batch = g.value(teacher_feats).shape[0];
    if (batch != g.value(student_feats).shape[0])
        throw LossError("ifd loss: batch mismatch " + shape_str(g.value(teacher_feats).shape) +
                        " vs " + shape_str(g.value(student_feats).shape));
    int mapped = ops::bias_add(g, ops::matmul(g, student_feats, transform_w), transform_b);
    int resid = ops::add(g, teacher_feats, ops::scale(g, mapped, -1.0));
    return ops::scale(g, ops::sum_of_squares(g, resid), alpha / static_cast<double>(batch));
}

// ---------------------------------------------------------------------------
// Value-level API (used by tests and anywhere a plain number is wanted)

struct ContrastiveBatch {
    TensorT<double> image_features;  // (N, d), rows unit norm
    TensorT<double> text_features;   // (N*M, d), unit norm, grouped by image
    int64_t captions_per_image = 1;
    double temperature = 1.0;
};

struct DistillPair {
    TensorT<double> teacher;      // (B, d_t)
    TensorT<double> student;      // (B, d_s)
    TensorT<double> transform_w;  // (d_s, d_t)
    TensorT<double> transform_b;  // (d_t)
    double alpha = 1.0;
};

struct LossBreakdown {
    double l_t2v = 0, l_v2t = 0, l_task = 0;
    double l_ifd_image = 0, l_ifd_text = 0, l_ifd_pair = 0;
    double l_total = 0;
};

double t2v_loss(const ContrastiveBatch& batch);
double v2t_loss(const ContrastiveBatch& batch);
double task_loss(const ContrastiveBatch& batch);
double ifd_loss(const DistillPair& pair);
double ifd_pair_loss(const DistillPair& visual, const DistillPair& text);
double total_loss(double task, double ifd_pair);

// alpha that makes the distillation term a fixed fraction r of the task loss
// on a reference batch: alpha = r * l_task / raw_distill_at_alpha_1.
double calibrate_alpha(double first_batch_task, double first_batch_raw_distill, double ratio);

}  // namespace comchain
