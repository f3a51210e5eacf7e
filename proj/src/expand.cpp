#include "comchain/expand.hpp"

#include <algorithm>

namespace comchain {

const char* to_string(WidthMethod m) {
    switch (m) {
        case WidthMethod::duplication: return "duplication";
        case WidthMethod::interpolation: return "interpolation";
        case WidthMethod::insertion: return "insertion";
    }
    return "?";
}

const char* to_string(DepthMethod m) {
    switch (m) {
        case DepthMethod::constant: return "constant";
        case DepthMethod::interval: return "interval";
        case DepthMethod::duplicate: return "duplicate";
    }
    return "?";
}

WidthMethod width_method_from(const std::string& s) {
    if (s == "duplication") return WidthMethod::duplication;
    if (s == "interpolation") return WidthMethod::interpolation;
    if (s == "insertion") return WidthMethod::insertion;
    throw ConfigError("unknown width method: " + s);
}

DepthMethod depth_method_from(const std::string& s) {
    if (s == "constant") return DepthMethod::constant;
    if (s == "interval") return DepthMethod::interval;
    if (s == "duplicate") return DepthMethod::duplicate;
    throw ConfigError("unknown depth method: " + s);
}

LayerMapping layer_mapping(int64_t p, int64_t q, DepthMethod method) {
    if (p < 1 || q < p)
        throw ContractError("layer_mapping: need student depth >= teacher depth >= 1, got " +
                            std::to_string(p) + " -> " + std::to_string(q));
    LayerMapping map;
    map.sources.assign(static_cast<size_t>(q), LayerSource{});
    map.teacher_pos.assign(static_cast<size_t>(p), -1);
    for (int64_t j = 0; j < p; ++j) {
        const int64_t pos = method == DepthMethod::constant ? j : j * q / p;
        map.teacher_pos[static_cast<size_t>(j)] = pos;
        map.sources[static_cast<size_t>(pos)] = {LayerSource::teacher, j};
    }
    for (int64_t k = 0; k < q; ++k) {
        auto& src = map.sources[static_cast<size_t>(k)];
        if (src.kind == LayerSource::teacher) continue;
        if (method == DepthMethod::duplicate) {
            // gaps copy the nearest preceding initialized block; interval
            // placement puts teacher block 0 at index 0, so one always exists
            src = {LayerSource::duplicate_of, k - 1};
        } else {
            src = {LayerSource::random, -1};
        }
    }
    return map;
}

namespace {

struct Dims {
    int64_t rows, cols;  // rank-1 tensors are treated as a single row
};

Dims dims_of(const std::vector<int64_t>& shape) {
    if (shape.size() == 1) return {1, shape[0]};
    if (shape.size() == 2) return {shape[0], shape[1]};
    throw ContractError("expand_width: only rank-1/2 tensors supported, got " +
                        shape_str(shape));
}

float interp_1d_axis(const Tensor& t, int64_t row_lo, int64_t row_hi, double row_frac,
                     int64_t col_lo, int64_t col_hi, double col_frac, int64_t cols) {
    auto at = [&](int64_t r, int64_t c) {
        return static_cast<double>(t.data[static_cast<size_t>(r * cols + c)]);
    };
    const double top = at(row_lo, col_lo) * (1 - col_frac) + at(row_lo, col_hi) * col_frac;
    const double bot = at(row_hi, col_lo) * (1 - col_frac) + at(row_hi, col_hi) * col_frac;
    return static_cast<float>(top * (1 - row_frac) + bot * row_frac);
}

}  // namespace

Tensor expand_width(const Tensor& teacher, const std::vector<int64_t>& target_shape,
                    WidthMethod method, Rng& rng, double fill_std, FillKind fill) {
    if (teacher.shape.size() != target_shape.size())
        throw ContractError("expand_width: rank mismatch " + shape_str(teacher.shape) +
                            " -> " + shape_str(target_shape));
    for (size_t i = 0; i < target_shape.size(); ++i)
        if (target_shape[i] < teacher.shape[i])
            throw ContractError("expand_width: target " + shape_str(target_shape) +
                                " smaller than teacher " + shape_str(teacher.shape));
    if (teacher.shape == target_shape) return teacher;

    const Dims src = dims_of(teacher.shape);
    const Dims dst = dims_of(target_shape);
    Tensor out(target_shape);

    switch (method) {
        case WidthMethod::duplication: {
            if (dst.rows % src.rows != 0 || dst.cols % src.cols != 0)
                throw ContractError("expand_width: duplication requires integer multiples, " +
                                    shape_str(teacher.shape) + " -> " + shape_str(target_shape));
            for (int64_t i = 0; i < dst.rows; ++i)
                for (int64_t j = 0; j < dst.cols; ++j)
                    out.data[static_cast<size_t>(i * dst.cols + j)] =
                        teacher.data[static_cast<size_t>((i % src.rows) * src.cols + (j % src.cols))];
            break;
        }
        case WidthMethod::interpolation: {
            for (int64_t i = 0; i < dst.rows; ++i) {
                const double rp = dst.rows > 1
                                      ? static_cast<double>(i) * (src.rows - 1) / (dst.rows - 1)
                                      : 0.0;
                const int64_t r0 = static_cast<int64_t>(rp);
                const int64_t r1 = std::min(r0 + 1, src.rows - 1);
                const double rf = rp - static_cast<double>(r0);
                for (int64_t j = 0; j < dst.cols; ++j) {
                    const double cp =
                        dst.cols > 1 ? static_cast<double>(j) * (src.cols - 1) / (dst.cols - 1)
                                     : 0.0;
                    const int64_t c0 = static_cast<int64_t>(cp);
                    const int64_t c1 = std::min(c0 + 1, src.cols - 1);
                    out.data[static_cast<size_t>(i * dst.cols + j)] =
                        interp_1d_axis(teacher, r0, r1, rf, c0, c1, cp - static_cast<double>(c0),
                                       src.cols);
                }
            }
            break;
        }
        case WidthMethod::insertion: {
            switch (fill) {
                case FillKind::ones: std::fill(out.data.begin(), out.data.end(), 1.0f); break;
                case FillKind::zeros: break;
                case FillKind::random:
                    for (auto& v : out.data) v = static_cast<float>(rng.trunc_normal(fill_std));
                    break;
            }
            for (int64_t i = 0; i < src.rows; ++i)
                for (int64_t j = 0; j < src.cols; ++j)
                    out.data[static_cast<size_t>(i * dst.cols + j)] =
                        teacher.data[static_cast<size_t>(i * src.cols + j)];
            break;
        }
    }
    return out;
}

namespace {

FillKind fill_kind_for(const std::string& name) {
    if (name.ends_with(".gain")) return FillKind::ones;
    if (name.ends_with(".bias") &&
        (name.find(".ln") != std::string::npos || name.find("ln_") != std::string::npos))
        return FillKind::zeros;
    return FillKind::random;
}

Tensor default_init(const std::string& name, const std::vector<int64_t>& shape, Rng& rng,
                    double std_) {
    Tensor t(shape);
    if (name.ends_with(".gain")) {
        std::fill(t.data.begin(), t.data.end(), 1.0f);
    } else if (name.ends_with(".bias")) {
        // zeros
    } else {
        for (auto& v : t.data) v = static_cast<float>(rng.trunc_normal(std_));
    }
    return t;
}

// QKV tensors hold Q, K and V side by side; each third expands independently
// so head structure survives the width change.
Tensor expand_qkv(const Tensor& teacher, const std::vector<int64_t>& target_shape,
                  WidthMethod method, Rng& rng, double fill_std) {
    const bool is_matrix = teacher.shape.size() == 2;
    const int64_t wt = (is_matrix ? teacher.shape[1] : teacher.shape[0]) / 3;
    const int64_t ws = (is_matrix ? target_shape[1] : target_shape[0]) / 3;
    Tensor out(target_shape);
    const int64_t rows_t = is_matrix ? teacher.shape[0] : 1;
    const int64_t rows_s = is_matrix ? target_shape[0] : 1;
    for (int64_t s = 0; s < 3; ++s) {
        Tensor seg(is_matrix ? std::vector<int64_t>{rows_t, wt} : std::vector<int64_t>{wt});
        for (int64_t i = 0; i < rows_t; ++i)
            for (int64_t j = 0; j < wt; ++j)
                seg.data[static_cast<size_t>(i * wt + j)] =
                    teacher.data[static_cast<size_t>(i * 3 * wt + s * wt + j)];
        Tensor grown = expand_width(
            seg, is_matrix ? std::vector<int64_t>{rows_s, ws} : std::vector<int64_t>{ws}, method,
            rng, fill_std, FillKind::random);
        for (int64_t i = 0; i < rows_s; ++i)
            for (int64_t j = 0; j < ws; ++j)
                out.data[static_cast<size_t>(i * 3 * ws + s * ws + j)] =
                    grown.data[static_cast<size_t>(i * ws + j)];
    }
    return out;
}

Tensor extract_qkv(const Tensor& student, const std::vector<int64_t>& teacher_shape) {
    const bool is_matrix = student.shape.size() == 2;
    const int64_t ws = (is_matrix ? student.shape[1] : student.shape[0]) / 3;
    const int64_t wt = (is_matrix ? teacher_shape[1] : teacher_shape[0]) / 3;
    const int64_t rows_t = is_matrix ? teacher_shape[0] : 1;
    Tensor out(teacher_shape);
    for (int64_t s = 0; s < 3; ++s)
        for (int64_t i = 0; i < rows_t; ++i)
            for (int64_t j = 0; j < wt; ++j)
                out.data[static_cast<size_t>(i * 3 * wt + s * wt + j)] =
                    student.data[static_cast<size_t>(i * 3 * ws + s * ws + j)];
    return out;
}

Tensor leading_slice(const Tensor& big, const std::vector<int64_t>& shape) {
    for (size_t i = 0; i < shape.size(); ++i)
        if (big.shape.size() != shape.size() || big.shape[i] < shape[i])
            throw ContractError("extract_submodel: student tensor " + shape_str(big.shape) +
                                " cannot contain " + shape_str(shape));
    Tensor out(shape);
    const Dims src = dims_of(big.shape);
    const Dims dst = dims_of(shape);
    for (int64_t i = 0; i < dst.rows; ++i)
        for (int64_t j = 0; j < dst.cols; ++j)
            out.data[static_cast<size_t>(i * dst.cols + j)] =
                big.data[static_cast<size_t>(i * src.cols + j)];
    return out;
}

// splits "image.block3.attn.qkv.weight" into tower prefix, block index, suffix
bool parse_block_name(const std::string& name, std::string& tower, int64_t& block,
                      std::string& suffix) {
    for (const char* t : {"image.block", "text.block"}) {
        const std::string prefix(t);
        if (!name.starts_with(prefix)) continue;
        const size_t dot = name.find('.', prefix.size());
        tower = prefix;
        block = std::stoll(name.substr(prefix.size(), dot - prefix.size()));
        suffix = name.substr(dot + 1);
        return true;
    }
    return false;
}

void check_compatible(const ModelConfig& teacher, const ModelConfig& student) {
    auto fail = [](const std::string& what) {
        throw ContractError("expand_model: " + what);
    };
    if (student.image.width < teacher.image.width || student.text.width < teacher.text.width)
        fail("student width must be >= teacher width in both towers");
    if (student.image.depth < teacher.image.depth || student.text.depth < teacher.text.depth)
        fail("student depth must be >= teacher depth in both towers");
    if (student.embed_dim < teacher.embed_dim) fail("student embed_dim must grow");
    if (student.image.patch_size != teacher.image.patch_size ||
        student.image.image_size != teacher.image.image_size ||
        student.image.channels != teacher.image.channels)
        fail("image geometry must match across the family");
    if (student.text.vocab_size != teacher.text.vocab_size ||
        student.text.context != teacher.text.context)
        fail("text vocab and context must match across the family");
}

}  // namespace

std::pair<std::vector<BlockTensors>, LayerMapping> expand_depth(
    const std::vector<BlockTensors>& teacher_blocks, int64_t student_depth, DepthMethod method,
    Rng& rng) {
    const int64_t p = static_cast<int64_t>(teacher_blocks.size());
    LayerMapping map = layer_mapping(p, student_depth, method);
    std::vector<BlockTensors> out(static_cast<size_t>(student_depth));
    for (int64_t k = 0; k < student_depth; ++k) {
        const auto& src = map.sources[static_cast<size_t>(k)];
        switch (src.kind) {
            case LayerSource::teacher:
                out[static_cast<size_t>(k)] = teacher_blocks[static_cast<size_t>(src.index)];
                break;
            case LayerSource::duplicate_of:
                out[static_cast<size_t>(k)] = out[static_cast<size_t>(src.index)];
                break;
            case LayerSource::random:
                for (const auto& [suffix, t] : teacher_blocks[0])
                    out[static_cast<size_t>(k)][suffix] = default_init(suffix, t.shape, rng, 0.02);
                break;
        }
    }
    return {std::move(out), std::move(map)};
}

ExpandResult expand_model(const ParamSet& teacher, const ModelConfig& teacher_cfg,
                          const ModelConfig& student_cfg, const ExpandSpec& spec) {
    teacher_cfg.validate();
    student_cfg.validate();
    check_compatible(teacher_cfg, student_cfg);
    Rng rng(spec.seed, "expand");

    ExpandResult res;
    res.image_map =
        layer_mapping(teacher_cfg.image.depth, student_cfg.image.depth, spec.depth_method);
    res.text_map =
        layer_mapping(teacher_cfg.text.depth, student_cfg.text.depth, spec.depth_method);

    for (const auto& ts : schema(student_cfg)) {
        try {
            std::string tower, suffix;
            int64_t k = 0;
            if (ts.name == "logit_scale") {
                res.params[ts.name] = teacher.at(ts.name);
            } else if (parse_block_name(ts.name, tower, k, suffix)) {
                const auto& map = tower == "image.block" ? res.image_map : res.text_map;
                const auto& src = map.sources[static_cast<size_t>(k)];
                if (src.kind == LayerSource::duplicate_of) {
                    res.params[ts.name] =
                        res.params.at(tower + std::to_string(src.index) + "." + suffix);
                } else if (src.kind == LayerSource::random) {
                    res.params[ts.name] =
                        default_init(ts.name, ts.shape, rng, spec.random_fill_std);
                } else {
                    const Tensor& tt =
                        teacher.at(tower + std::to_string(src.index) + "." + suffix);
                    res.params[ts.name] =
                        suffix.starts_with("attn.qkv")
                            ? expand_qkv(tt, ts.shape, spec.width_method, rng,
                                         spec.random_fill_std)
                            : expand_width(tt, ts.shape, spec.width_method, rng,
                                           spec.random_fill_std, fill_kind_for(ts.name));
                }
            } else {
                res.params[ts.name] = expand_width(teacher.at(ts.name), ts.shape,
                                                   spec.width_method, rng, spec.random_fill_std,
                                                   fill_kind_for(ts.name));
            }
        } catch (const std::exception& e) {
            throw ContractError("expand_model: " + ts.name + ": " + e.what());
        }
    }
    return res;
}

ParamSet extract_submodel(const ParamSet& student, const ModelConfig& teacher_cfg,
                          const ModelConfig& student_cfg, const LayerMapping& image_map,
                          const LayerMapping& text_map) {
    if (image_map.teacher_pos.size() != static_cast<size_t>(teacher_cfg.image.depth) ||
        text_map.teacher_pos.size() != static_cast<size_t>(teacher_cfg.text.depth))
        throw ContractError("extract_submodel: mapping does not match teacher config");
    (void)student_cfg;
    ParamSet out;
    for (const auto& ts : schema(teacher_cfg)) {
        std::string tower, suffix;
        int64_t j = 0;
        if (ts.name == "logit_scale") {
            out[ts.name] = student.at(ts.name);
        } else if (parse_block_name(ts.name, tower, j, suffix)) {
            const auto& map = tower == "image.block" ? image_map : text_map;
            const int64_t pos = map.teacher_pos[static_cast<size_t>(j)];
            const Tensor& st = student.at(tower + std::to_string(pos) + "." + suffix);
            out[ts.name] = suffix.starts_with("attn.qkv") ? extract_qkv(st, ts.shape)
                                                          : leading_slice(st, ts.shape);
        } else {
            out[ts.name] = leading_slice(student.at(ts.name), ts.shape);
        }
    }
    return out;
}

}  // namespace comchain
