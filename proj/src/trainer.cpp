#include "comchain/trainer.hpp"

#include "comchain/losses.hpp"

#include <chrono>
#include <cmath>
#include <memory>

namespace comchain {

namespace {

struct StepLosses {
    double task = 0, ifd = 0, total = 0;
};

// Builds the full training graph for one batch and returns the loss node ids.
struct StepGraph {
    Graph<float> g;
    TaskLossNodes<float> task;
    int ifd_pair = -1;
    int total = -1;
};

}  // namespace

TrainResult train_model(TrainJob job) {
    job.config.validate();
    if (!job.train) throw TrainError("train_model: no training dataset");
    if (job.epochs < 1) throw TrainError("train_model: epochs must be >= 1");
    const bool has_teacher = job.teacher_params != nullptr;
    if (has_teacher && !job.teacher_config)
        throw TrainError("train_model: teacher params without teacher config");
    const bool distill_on = has_teacher && job.distill.mode != DistillSettings::Mode::off;

    const int64_t captions = job.config.captions_per_image;
    BatchStream stream(*job.train, job.batch_size, captions,
                       job.seed ^ fnv1a64("data/" + job.config.name), /*shuffle=*/true);
    const int64_t steps_per_epoch = stream.batches_per_epoch();
    const int64_t total_steps = steps_per_epoch * job.epochs;

    // Distillation transforms live in the same ParamSet while training (one
    // optimizer, one step counter) and are stripped from the result.
    ParamSet params = std::move(job.init_params);
    if (distill_on) {
        Rng rng(job.seed, "distill-transform/" + job.config.name);
        const int64_t es = job.config.embed_dim, et = job.teacher_config->embed_dim;
        for (const char* side : {"visual", "text"}) {
            Tensor w({es, et});
            for (auto& v : w.data) v = static_cast<float>(rng.trunc_normal(0.02));
            params.emplace(std::string("distill.") + side + ".weight", std::move(w));
            params.emplace(std::string("distill.") + side + ".bias", Tensor({et}, 0.0f));
        }
    }

    OptimState optim;
    optim.cfg = {job.optim.lr, job.optim.beta1, job.optim.beta2, job.optim.eps,
                 job.optim.weight_decay};
    LrSchedule schedule{job.optim.lr, job.optim.warmup_steps, total_steps};

    const MacBreakdown student_macs = mac_breakdown(job.config, captions);
    const uint64_t teacher_forward =
        has_teacher ? forward_macs(*job.teacher_config, captions) : 0;

    MetricsWriter* writer = nullptr;
    MetricsWriter writer_storage(job.metrics_path);
    if (!job.metrics_path.empty()) writer = &writer_storage;

    TrainResult result;
    double alpha = job.distill.mode == DistillSettings::Mode::fixed_alpha ? job.distill.alpha : 0;
    bool alpha_ready = !distill_on || job.distill.mode != DistillSettings::Mode::ratio;
    uint64_t macs = 0;
    int64_t step = 0;
    const auto t0 = std::chrono::steady_clock::now();

    auto build_step = [&](const Batch& batch, double step_alpha, bool with_distill) {
        auto sg = std::make_unique<StepGraph>();
        auto gp = params_on_graph(sg->g, params, /*trainable=*/true);
        int vfeat = encode_image(sg->g, gp, job.config.image, batch.images);
        int tfeat = encode_text(sg->g, gp, job.config.text, batch.tokens);
        int logit_scale = ops::exp_clamped(sg->g, gp.at("logit_scale"), 100.0);
        sg->task = build_task_loss(sg->g, vfeat, tfeat, captions, logit_scale);
        sg->total = sg->task.task;
        if (with_distill) {
            Tensor tv = infer_image_features(*job.teacher_params, *job.teacher_config,
                                             batch.images);
            Tensor tt = infer_text_features(*job.teacher_params, *job.teacher_config,
                                            batch.tokens);
            int ifd_v = build_ifd_loss(sg->g, sg->g.input(std::move(tv)), vfeat,
                                       gp.at("distill.visual.weight"),
                                       gp.at("distill.visual.bias"), step_alpha);
            int ifd_t = build_ifd_loss(sg->g, sg->g.input(std::move(tt)), tfeat,
                                       gp.at("distill.text.weight"),
                                       gp.at("distill.text.bias"), step_alpha);
            sg->ifd_pair = ops::scale(sg->g, ops::add(sg->g, ifd_v, ifd_t), 0.5);
            sg->total = ops::add(sg->g, sg->task.task, sg->ifd_pair);
        }
        return sg;
    };

    for (int64_t epoch = 0; epoch < job.epochs; ++epoch) {
        double sum_task = 0, sum_ifd = 0, sum_total = 0;
        int64_t batches = 0;
        for (const Batch& batch : stream.epoch(epoch)) {
            if (!alpha_ready) {
                // probe pass: measure the raw distillation magnitude at
                // alpha=1 and pick alpha so l_ifd = ratio * l_task here
                auto probe = build_step(batch, 1.0, distill_on);
                const double task_v = probe->g.scalar(probe->task.task);
                const double raw = probe->g.scalar(probe->ifd_pair);
                alpha = calibrate_alpha(task_v, raw, job.distill.ratio);
                alpha_ready = true;
                result.calibrated_alpha = alpha;
            }
            auto sg = build_step(batch, alpha, distill_on);
            const double l_task = sg->g.scalar(sg->task.task);
            const double l_ifd = distill_on ? sg->g.scalar(sg->ifd_pair) : 0.0;
            const double l_total = sg->g.scalar(sg->total);
            if (!std::isfinite(l_total))
                throw TrainError("non-finite loss in " + job.config.name + " at epoch " +
                                 std::to_string(epoch) + " step " + std::to_string(step));
            if (result.first_batch_ifd_task_ratio < 0 && distill_on)
                result.first_batch_ifd_task_ratio = l_ifd / l_task;

            auto grads = sg->g.backward(sg->total);
            sg.reset();  // release activations before the update
            adamw_step(params, grads, optim, schedule.at(step));

            const uint64_t rows = static_cast<uint64_t>(batch.images.shape[0]);
            macs += rows * (student_macs.c_t + teacher_forward);
            sum_task += l_task;
            sum_ifd += l_ifd;
            sum_total += l_total;
            ++batches;
            ++step;
        }

        MetricsRow row;
        row.run_id = job.run_id.empty() ? job.config.name : job.run_id;
        row.model = job.config.name;
        row.epoch = epoch + 1;
        row.step = step;
        row.l_task = sum_task / static_cast<double>(batches);
        row.l_ifd = sum_ifd / static_cast<double>(batches);
        row.l_total = sum_total / static_cast<double>(batches);
        row.cumulative_macs = job.initial_cumulative_macs + macs;
        row.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (job.eval) {
            const EvalResult ev = eval_retrieval(params, job.config, *job.eval);
            row.r1_t2i = ev.r1_t2i;
            row.r1_i2t = ev.r1_i2t;
            row.class_top1 = ev.class_top1;
            result.final_eval = ev;
        }
        if (writer) writer->append(row);
        result.rows.push_back(std::move(row));
    }

    std::erase_if(params, [](const auto& kv) { return kv.first.starts_with("distill."); });
    result.params = std::move(params);
    result.run_macs = macs;
    return result;
}

}  // namespace comchain
