#include "camoseg/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "camoseg/errors.hpp"
#include "camoseg/image_io.hpp"
#include "camoseg/rng.hpp"

namespace camoseg::train {

void TrainConfig::validate() const {
    if (iterations < 0) throw ConfigError("train.iterations must be >= 0");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (learning_rate <= 0.0) throw ConfigError("train.learning_rate must be > 0");
    if (weight_decay < 0.0) throw ConfigError("train.weight_decay must be >= 0");
    if (crop_size < 32 || crop_size % 32 != 0)
        throw ConfigError("train.crop_size must be a positive multiple of 32");
    const auto d = drops();
    for (size_t i = 0; i < d.size(); ++i) {
        if (d[i] >= iterations && iterations > 0)
            throw ConfigError("train.lr_drop_points must be < iterations");
        if (i > 0 && d[i] <= d[i - 1])
            throw ConfigError("train.lr_drop_points must be strictly increasing");
    }
}

std::vector<int64_t> TrainConfig::drops() const {
    if (!lr_drop_points.empty()) return lr_drop_points;
    // proportional to the reference 81k/86k of 90k: 90% and ~95.6%
    std::vector<int64_t> d = {iterations * 81 / 90, iterations * 86 / 90};
    if (d[1] <= d[0]) d[1] = d[0] + 1;
    if (d[1] >= iterations) d.pop_back();
    if (iterations < 3) d.clear();
    return d;
}

double lr_at(const TrainConfig& cfg, int64_t iter) {
    double lr = cfg.learning_rate;
    for (int64_t p : cfg.drops())
        if (iter >= p) lr *= 0.1;
    return lr;
}

losses::TotalLossResult sample_loss(model::Pipeline& pipe, const data::AnnotatedSample& sample,
                                    const losses::TotalLossConfig& cfg,
                                    const model::AblationSwitches& sw) {
    auto out = pipe.forward(sample.image, sw);

    losses::MatchAssignment match;
    std::vector<losses::GroundTruthInstance> gts;
    if (!sample.instances.empty()) {
        const int64_t h4 = out.coarse.h4, w4 = out.coarse.w4;
        std::vector<Tensor> gt_low;
        std::vector<int64_t> labels;
        for (const auto& inst : sample.instances) {
            gts.push_back({inst.mask.reshaped({1, inst.mask.size()}), inst.category_id});
            gt_low.push_back(io::resize_mask_nearest(inst.mask, h4, w4));
            labels.push_back(inst.category_id);
        }
        const Tensor pred_low = out.coarse.logits_quarter->value.reshaped(
            {pipe.config().maskgen.num_queries, h4, w4});
        const ag::Var tall = pipe.text_with_noobj(sw.no_text);
        const Tensor cost = losses::build_cost_matrix(pred_low, gt_low, out.coarse.embeddings->value,
                                                      tall->value, labels, pipe.tau_value(), cfg.alpha);
        match = losses::hungarian_match(cost);
    } else {
        for (int64_t i = 0; i < pipe.config().maskgen.num_queries; ++i)
            match.unmatched_predictions.push_back(i);
    }

    losses::TotalLossInputs in;
    in.pred_mask_logits = out.final_logits;
    in.embeddings = out.coarse.embeddings;
    in.confidences = out.confidence_logits;
    in.text_with_noobj = pipe.text_with_noobj(sw.no_text);
    in.tau = pipe.tau();
    return losses::total_loss(in, match, gts, cfg);
}

namespace {

data::AnnotatedSample plain_resize(const data::AnnotatedSample& s, int64_t size) {
    data::AnnotatedSample out;
    out.image = io::resize_image(s.image, size, size);
    for (const auto& inst : s.instances)
        out.instances.push_back({io::resize_mask_nearest(inst.mask, size, size), inst.category_id,
                                 inst.iscrowd});
    return out;
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

TrainResult run_training(model::Pipeline& pipe, const data::DatasetIndex& index,
                         const TrainConfig& cfg, std::ostream& log,
                         const model::AblationSwitches& sw) {
    cfg.validate();
    if (index.samples.empty()) throw DataError("run_training: empty dataset");

    const auto factors = data::repeat_factors(index, cfg.repeat_threshold);
    std::vector<int64_t> queue;
    size_t qpos = 0;
    int64_t epoch = 0;
    auto refill = [&] {
        queue = data::epoch_sample_list(factors, Rng::derive(cfg.seed, 0xE70C, static_cast<uint64_t>(epoch)));
        Rng rng(Rng::derive(cfg.seed, 0x5481, static_cast<uint64_t>(epoch)));
        for (size_t i = queue.size(); i > 1; --i)
            std::swap(queue[i - 1], queue[rng.below(i)]);
        qpos = 0;
        ++epoch;
    };

    auto& params = pipe.params().entries();
    AdamState opt;
    opt.m.resize(params.size());
    opt.v.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
        opt.m[i] = Tensor::zeros_like(params[i].second->value);
        opt.v[i] = Tensor::zeros_like(params[i].second->value);
    }

    TrainResult result;
    for (int64_t iter = 0; iter < cfg.iterations; ++iter) {
        ag::Var batch_total;
        losses::LossBreakdown bd;
        for (int64_t k = 0; k < cfg.batch_size; ++k) {
            if (qpos >= queue.size()) refill();
            const int64_t si = queue[qpos++];
            data::AnnotatedSample sample = data::load_sample(index, si);
            sample = cfg.augment
                         ? data::augment(sample, Rng::derive(cfg.seed, 0xA469, static_cast<uint64_t>(iter * cfg.batch_size + k)),
                                         cfg.crop_size)
                         : plain_resize(sample, cfg.crop_size);
            auto r = sample_loss(pipe, sample, cfg.loss, sw);
            batch_total = batch_total ? ag::add(batch_total, r.total) : r.total;
            bd.bce += r.breakdown.bce;
            bd.dice += r.breakdown.dice;
            bd.ce += r.breakdown.ce;
            bd.total += r.breakdown.total;
        }
        const double invb = 1.0 / static_cast<double>(cfg.batch_size);
        batch_total = ag::affine(batch_total, invb, 0.0);
        bd.bce *= invb;
        bd.dice *= invb;
        bd.ce *= invb;
        bd.total *= invb;
        if (!std::isfinite(bd.total))
            throw DomainError("run_training: NaN loss at iteration " + std::to_string(iter));

        ag::backward(batch_total);

        double gsq = 0.0;
        for (auto& [name, p] : params)
            if (p->grad.size() == p->value.size())
                for (int64_t i = 0; i < p->grad.size(); ++i) gsq += p->grad[i] * p->grad[i];
        const double gnorm = std::sqrt(gsq);
        const double clip = gnorm > 1.0 ? 1.0 / gnorm : 1.0;

        const double lr = lr_at(cfg, iter);
        const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        ++opt.t;
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(opt.t));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(opt.t));
        for (size_t pi = 0; pi < params.size(); ++pi) {
            auto& p = params[pi].second;
            const bool hasg = p->grad.size() == p->value.size();
            for (int64_t i = 0; i < p->value.size(); ++i) {
                const double g = hasg ? p->grad[i] * clip : 0.0;
                opt.m[pi][i] = b1 * opt.m[pi][i] + (1.0 - b1) * g;
                opt.v[pi][i] = b2 * opt.v[pi][i] + (1.0 - b2) * g * g;
                const double mh = opt.m[pi][i] / c1, vh = opt.v[pi][i] / c2;
                p->value[i] -= lr * (mh / (std::sqrt(vh) + eps) + cfg.weight_decay * p->value[i]);
            }
            p->grad = Tensor();
        }

        log << "{\"iter\":" << iter << ",\"lr\":" << fmt_double(lr) << ",\"bce\":" << fmt_double(bd.bce)
            << ",\"dice\":" << fmt_double(bd.dice) << ",\"ce\":" << fmt_double(bd.ce)
            << ",\"total\":" << fmt_double(bd.total) << "}\n";
        result.last = bd;
        result.iterations = iter + 1;
    }
    return result;
}

namespace {

void put_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
void put_i64(std::ostream& os, int64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
uint64_t get_u64(std::istream& is) {
    uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 8);
    return v;
}
int64_t get_i64(std::istream& is) {
    int64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 8);
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const model::Pipeline& pipe, const AdamState* opt,
                     int64_t iter, uint64_t seed) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("save_checkpoint: cannot open " + path);
    // manifest: magic, version, config hash, seed, iter, has-opt flag, param
    // count; then per parameter name/rank/dims + raw little-endian doubles
    os.write("CAMOCKPT", 8);
    put_u64(os, 1);
    put_u64(os, const_cast<model::Pipeline&>(pipe).config_hash());
    put_u64(os, seed);
    put_i64(os, iter);
    const auto& params = const_cast<model::Pipeline&>(pipe).params().entries();
    put_u64(os, opt ? 1 : 0);
    put_i64(os, static_cast<int64_t>(params.size()));
    for (const auto& [name, p] : params) {
        put_i64(os, static_cast<int64_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_i64(os, static_cast<int64_t>(p->value.rank()));
        for (size_t d = 0; d < p->value.rank(); ++d) put_i64(os, p->value.dim(d));
        os.write(reinterpret_cast<const char*>(p->value.data()), p->value.size() * 8);
    }
    if (opt) {
        put_i64(os, opt->t);
        for (const auto& t : opt->m)
            os.write(reinterpret_cast<const char*>(t.data()), t.size() * 8);
        for (const auto& t : opt->v)
            os.write(reinterpret_cast<const char*>(t.data()), t.size() * 8);
    }
    if (!os) throw DataError("save_checkpoint: write failed for " + path);
}

CheckpointInfo load_checkpoint(const std::string& path, model::Pipeline& pipe, AdamState* opt) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("load_checkpoint: cannot open " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, "CAMOCKPT", 8) != 0)
        throw DataError("load_checkpoint: bad magic in " + path);
    if (get_u64(is) != 1) throw DataError("load_checkpoint: unsupported version");
    if (get_u64(is) != pipe.config_hash())
        throw ConfigError("load_checkpoint: config hash mismatch (checkpoint built from a "
                          "different model configuration)");
    CheckpointInfo info;
    info.seed = get_u64(is);
    info.iter = get_i64(is);
    info.has_opt = get_u64(is) != 0;
    const int64_t n = get_i64(is);
    auto& params = pipe.params().entries();
    if (n != static_cast<int64_t>(params.size()))
        throw DataError("load_checkpoint: parameter count mismatch");
    for (auto& [name, p] : params) {
        const int64_t len = get_i64(is);
        std::string nm(static_cast<size_t>(len), '\0');
        is.read(nm.data(), len);
        if (nm != name) throw DataError("load_checkpoint: parameter order mismatch at " + nm);
        const int64_t rank = get_i64(is);
        std::vector<int64_t> dims;
        for (int64_t d = 0; d < rank; ++d) dims.push_back(get_i64(is));
        if (dims != p->value.shape()) throw DataError("load_checkpoint: shape mismatch at " + nm);
        is.read(reinterpret_cast<char*>(p->value.data()), p->value.size() * 8);
    }
    if (info.has_opt && opt) {
        opt->t = get_i64(is);
        opt->m.clear();
        opt->v.clear();
        for (auto& [name, p] : params) {
            Tensor t = Tensor::zeros_like(p->value);
            is.read(reinterpret_cast<char*>(t.data()), t.size() * 8);
            opt->m.push_back(std::move(t));
        }
        for (auto& [name, p] : params) {
            Tensor t = Tensor::zeros_like(p->value);
            is.read(reinterpret_cast<char*>(t.data()), t.size() * 8);
            opt->v.push_back(std::move(t));
        }
    }
    if (!is) throw DataError("load_checkpoint: truncated file " + path);
    return info;
}

InferenceResult infer_image(model::Pipeline& pipe, const Tensor& image, double conf_threshold,
                            const model::AblationSwitches& sw, bool use_variants) {
    auto out = pipe.forward(image, sw);
    std::vector<Tensor> logits;
    for (const auto& v : out.final_logits) logits.push_back(v->value.reshaped({out.height, out.width}));
    InferenceResult res;
    res.instances = cin::score_and_select(logits, out.confidences, conf_threshold, out.height, out.width);
    const double tau = pipe.tau_value();
    for (const auto& inst : res.instances) {
        Tensor emb({pipe.config().text_dim});
        for (int64_t d = 0; d < pipe.config().text_dim; ++d)
            emb[d] = out.coarse.embeddings->value.at(inst.index, d);
        res.category_ids.push_back(vocab::ensemble_classify(emb, pipe.text(), tau, use_variants).category_id);
    }
    if (out.tva_out.attn_raw) {
        res.h8 = out.tva_out.h8;
        res.w8 = out.tva_out.w8;
        const Tensor& ar = out.tva_out.attn_raw->value;
        const Tensor& af = out.tva_out.attn_filtered->value;
        for (int64_t i = 0; i < ar.dim(0); ++i) {
            std::vector<double> r(static_cast<size_t>(ar.dim(1))), f(static_cast<size_t>(af.dim(1)));
            for (int64_t p = 0; p < ar.dim(1); ++p) r[static_cast<size_t>(p)] = ar.at(i, p);
            for (int64_t p = 0; p < af.dim(1); ++p) f[static_cast<size_t>(p)] = af.at(i, p);
            res.attention_raw.push_back(std::move(r));
            res.attention_filtered.push_back(std::move(f));
        }
    }
    return res;
}

eval::EvalResult evaluate_dataset(model::Pipeline& pipe, const data::DatasetIndex& index,
                                  int64_t crop_size, double conf_threshold, bool class_agnostic,
                                  const model::AblationSwitches& sw, bool use_variants) {
    std::vector<std::vector<eval::ScoredInstance>> preds;
    std::vector<std::vector<eval::GtInstance>> gts;
    for (size_t i = 0; i < index.samples.size(); ++i) {
        data::AnnotatedSample s = plain_resize(data::load_sample(index, static_cast<int64_t>(i)), crop_size);
        auto inf = infer_image(pipe, s.image, conf_threshold, sw, use_variants);
        std::vector<eval::ScoredInstance> p;
        for (size_t k = 0; k < inf.instances.size(); ++k)
            p.push_back({inf.instances[k].mask, inf.instances[k].confidence, inf.category_ids[k]});
        preds.push_back(std::move(p));
        std::vector<eval::GtInstance> g;
        for (const auto& inst : s.instances) g.push_back({inst.mask, inst.category_id, inst.iscrowd});
        gts.push_back(std::move(g));
    }
    return eval::average_precision(preds, gts, eval::coco_thresholds(), class_agnostic);
}

}  // namespace camoseg::train
