#include "comchain/eval.hpp"

#include <algorithm>
#include <cmath>

namespace comchain {

namespace {

void l2_normalize_rows(Tensor& t) {
    const int64_t r = t.shape[0], c = t.shape[1];
    for (int64_t i = 0; i < r; ++i) {
        float* row = t.data.data() + i * c;
        float s = 0;
        for (int64_t j = 0; j < c; ++j) s += row[j] * row[j];
        const float n = std::max(std::sqrt(s), 1e-12f);
        for (int64_t j = 0; j < c; ++j) row[j] /= n;
    }
}

int64_t argmax_row(const float* row, int64_t n) {
    int64_t best = 0;
    for (int64_t j = 1; j < n; ++j)
        if (row[j] > row[best]) best = j;
    return best;
}

}  // namespace

Tensor infer_image_features(const ParamSet& params, const ModelConfig& config,
                            const Tensor& images) {
    Graph<float> g;
    auto gp = params_on_graph(g, params, /*trainable=*/false);
    return g.value(encode_image(g, gp, config.image, images));
}

Tensor infer_text_features(const ParamSet& params, const ModelConfig& config,
                           const std::vector<int64_t>& tokens) {
    Graph<float> g;
    auto gp = params_on_graph(g, params, /*trainable=*/false);
    return g.value(encode_text(g, gp, config.text, tokens));
}

EvalResult eval_retrieval(const ParamSet& params, const ModelConfig& config,
                          const Dataset& split) {
    const int64_t n = static_cast<int64_t>(split.class_ids.size());
    if (n == 0) throw DataError("eval_retrieval: empty split");
    const int64_t m = split.spec.captions_per_image;
    const int64_t e = config.embed_dim;

    // encode in chunks to bound activation memory
    Tensor v({n, e});
    Tensor t({n * m, e});
    const int64_t chunk = 64;
    const int64_t img_n = split.spec.image_floats();
    const int64_t cap_len = split.spec.caption_len;
    for (int64_t start = 0; start < n; start += chunk) {
        const int64_t b = std::min(chunk, n - start);
        Tensor imgs({b, img_n});
        std::copy(split.images.data.begin() + start * img_n,
                  split.images.data.begin() + (start + b) * img_n, imgs.data.begin());
        Tensor vf = infer_image_features(params, config, imgs);
        std::copy(vf.data.begin(), vf.data.end(), v.data.begin() + start * e);
        std::vector<int64_t> tokens(split.tokens.begin() + start * m * cap_len,
                                    split.tokens.begin() + (start + b) * m * cap_len);
        Tensor tf = infer_text_features(params, config, tokens);
        std::copy(tf.data.begin(), tf.data.end(), t.data.begin() + start * m * e);
    }
    l2_normalize_rows(v);
    l2_normalize_rows(t);

    EvalResult res;
    res.images = n;
    res.captions = n * m;

    // text -> image: each caption ranks all images
    int64_t hit = 0;
    std::vector<float> sims(static_cast<size_t>(n));
    for (int64_t q = 0; q < n * m; ++q) {
        const float* trow = t.data.data() + q * e;
        for (int64_t i = 0; i < n; ++i) {
            const float* vrow = v.data.data() + i * e;
            float s = 0;
            for (int64_t j = 0; j < e; ++j) s += trow[j] * vrow[j];
            sims[static_cast<size_t>(i)] = s;
        }
        if (argmax_row(sims.data(), n) == q / m) ++hit;
    }
    res.r1_t2i = static_cast<double>(hit) / static_cast<double>(n * m);

    // image -> text: correct when the top caption belongs to the image
    hit = 0;
    std::vector<float> csims(static_cast<size_t>(n * m));
    for (int64_t q = 0; q < n; ++q) {
        const float* vrow = v.data.data() + q * e;
        for (int64_t i = 0; i < n * m; ++i) {
            const float* trow = t.data.data() + i * e;
            float s = 0;
            for (int64_t j = 0; j < e; ++j) s += vrow[j] * trow[j];
            csims[static_cast<size_t>(i)] = s;
        }
        if (argmax_row(csims.data(), n * m) / m == q) ++hit;
    }
    res.r1_i2t = static_cast<double>(hit) / static_cast<double>(n);

    // class prototypes: mean caption embedding per class, re-normalized
    int64_t n_classes = 0;
    for (int32_t c : split.class_ids) n_classes = std::max<int64_t>(n_classes, c + 1);
    Tensor proto({n_classes, e}, 0.0f);
    std::vector<int64_t> counts(static_cast<size_t>(n_classes), 0);
    for (int64_t q = 0; q < n; ++q) {
        const int32_t cls = split.class_ids[static_cast<size_t>(q)];
        counts[static_cast<size_t>(cls)] += m;
        for (int64_t j = 0; j < m; ++j)
            for (int64_t d = 0; d < e; ++d)
                proto.data[static_cast<size_t>(cls * e + d)] +=
                    t.data[static_cast<size_t>((q * m + j) * e + d)];
    }
    for (int64_t c = 0; c < n_classes; ++c)
        if (counts[static_cast<size_t>(c)] > 0)
            for (int64_t d = 0; d < e; ++d)
                proto.data[static_cast<size_t>(c * e + d)] /=
                    static_cast<float>(counts[static_cast<size_t>(c)]);
    l2_normalize_rows(proto);
    hit = 0;
    std::vector<float> psims(static_cast<size_t>(n_classes));
    for (int64_t q = 0; q < n; ++q) {
        const float* vrow = v.data.data() + q * e;
        for (int64_t c = 0; c < n_classes; ++c) {
            const float* prow = proto.data.data() + c * e;
            float s = 0;
            for (int64_t j = 0; j < e; ++j) s += vrow[j] * prow[j];
            psims[static_cast<size_t>(c)] = s;
        }
        if (argmax_row(psims.data(), n_classes) == split.class_ids[static_cast<size_t>(q)]) ++hit;
    }
    res.class_top1 = static_cast<double>(hit) / static_cast<double>(n);
    return res;
}

double lta_metric(const EvalResult& r) { return 50.0 * (r.r1_t2i + r.r1_i2t); }

}  // namespace comchain
