#include "comchain/losses.hpp"

#include <cmath>

namespace comchain {

namespace {

void validate_batch(const ContrastiveBatch& batch) {
    if (!(batch.temperature > 0))
        throw ContractError("contrastive batch: temperature must be positive");
    if (batch.captions_per_image < 1)
        throw LossError("contrastive batch: captions_per_image must be >= 1");
    const int64_t n = batch.image_features.shape[0];
    if (batch.text_features.shape[0] != n * batch.captions_per_image ||
        batch.text_features.shape[1] != batch.image_features.shape[1])
        throw LossError("contrastive batch: feature shapes inconsistent");
    for (const auto* t : {&batch.image_features, &batch.text_features}) {
        const int64_t rows = t->shape[0], cols = t->shape[1];
        for (int64_t i = 0; i < rows; ++i) {
            double s = 0;
            for (int64_t j = 0; j < cols; ++j) {
                const double v = t->data[static_cast<size_t>(i * cols + j)];
                s += v * v;
            }
            if (std::fabs(std::sqrt(s) - 1.0) > 1e-5)
                throw LossError("contrastive batch: row " + std::to_string(i) +
                                " is not unit norm");
        }
    }
}

TaskLossNodes<double> batch_on_graph(Graph<double>& g, const ContrastiveBatch& batch) {
    validate_batch(batch);
    int v = g.input(batch.image_features);
    int t = g.input(batch.text_features);
    TensorT<double> scale({1, 1});
    scale.data[0] = 1.0 / batch.temperature;
    return build_task_loss(g, v, t, batch.captions_per_image, g.input(scale));
}

double ifd_value(Graph<double>& g, const DistillPair& pair) {
    if (!(pair.alpha >= 0) || !std::isfinite(pair.alpha))
        throw LossError("ifd loss: alpha must be finite and >= 0");
    int node = build_ifd_loss(g, g.input(pair.teacher), g.input(pair.student),
                              g.input(pair.transform_w), g.input(pair.transform_b), pair.alpha);
    return g.scalar(node);
}

}  // namespace

double t2v_loss(const ContrastiveBatch& batch) {
    Graph<double> g;
    return g.scalar(batch_on_graph(g, batch).t2v);
}

double v2t_loss(const ContrastiveBatch& batch) {
    Graph<double> g;
    return g.scalar(batch_on_graph(g, batch).v2t);
}

double task_loss(const ContrastiveBatch& batch) {
    Graph<double> g;
    return g.scalar(batch_on_graph(g, batch).task);
}

double ifd_loss(const DistillPair& pair) {
    Graph<double> g;
    return ifd_value(g, pair);
}

double ifd_pair_loss(const DistillPair& visual, const DistillPair& text) {
    Graph<double> g;
    return 0.5 * (ifd_value(g, visual) + ifd_value(g, text));
}

double total_loss(double task, double ifd_pair) { return task + ifd_pair; }

double calibrate_alpha(double first_batch_task, double first_batch_raw_distill, double ratio) {
    if (!(first_batch_raw_distill > 1e-12))
        throw LossError("calibrate_alpha: raw distillation value " +
                        std::to_string(first_batch_raw_distill) +
                        " too small (features already matched)");
    if (ratio < 0) throw LossError("calibrate_alpha: ratio must be >= 0");
    return ratio * first_batch_task / first_batch_raw_distill;
}

}  // namespace comchain
