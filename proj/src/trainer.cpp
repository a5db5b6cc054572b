#include "advst/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "advst/errors.hpp"
#include "advst/losses.hpp"
#include "advst/ops.hpp"

namespace advst {

namespace o = ops;

namespace {

constexpr std::size_t kPixels = 3 * 32 * 32;

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

void check_config(const TrainConfig& cfg) {
    if (cfg.lambda < 0 || cfg.beta < 0 || cfg.alpha < 0 || cfg.epsilon < 0 ||
        cfg.eta < 0 || cfg.early_stop_delta < 0)
        throw ContractError("train config: rates must be nonnegative");
    if (cfg.batch < 1) throw ContractError("train config: batch size must be >= 1");
    if (cfg.l_max < 1 || cfg.l_max > static_cast<std::size_t>(kNumBaseOps))
        throw ContractError("train config: l_max must lie in [1," +
                            std::to_string(kNumBaseOps) + "]");
}

// Per-sample ascent state: one transform chain with its parameter vector.
struct ChainSampler {
    TransformChain chain;
    TransformParams<float> params;

    void draw(const ChainDistribution& dist, Rng& rng) {
        chain = sample_chain(dist, rng);
        params = init_params<float>(chain, rng);
    }
    std::vector<Tensor<float>*> learnables() {
        std::vector<Tensor<float>*> out;
        for (auto& t : params.learnable)
            if (t.numel() > 0) out.push_back(&t);
        return out;
    }
    Tensor<float> apply(const Tensor<float>& x) const {
        return apply_chain(chain, params, x);
    }
    void project() { clamp_params(chain, params); }
};

// Pixel-space baseline state: an additive perturbation on the image.
struct PixelSampler {
    Tensor<float> delta;

    std::vector<Tensor<float>*> learnables() { return {&delta}; }
    Tensor<float> apply(const Tensor<float>& x) const {
        return o::clamp(o::add(x, delta), 0.0, 1.0);
    }
    void project() {}
};

// Shared ascent loop. Samplers are pre-drawn in source order so the random
// stream does not depend on the batch grouping. Model parameters are only
// ever read: they are never adopted into the per-step graphs, so gradients
// stop at them.
template <class Sampler>
Dataset generate_impl(const ModelParams<float>& model, const Dataset& source,
                      const TrainConfig& cfg, std::vector<Sampler>& samplers,
                      GenStats* stats) {
    const std::size_t n = source.size();
    Dataset out;
    out.name = "generated";
    out.labels = source.labels;
    out.classes = source.classes;
    out.images = Tensor<float>::zeros(source.images.shape());

    GenStats local;
    GenStats& gs = stats ? *stats : local;
    gs = GenStats{};
    gs.sample_obj_start.assign(n, 0.0);
    gs.sample_obj_end.assign(n, 0.0);

    for (std::size_t b0 = 0; b0 < n; b0 += cfg.batch) {
        const std::size_t bs = std::min(cfg.batch, n - b0);
        std::vector<std::size_t> idx(bs);
        for (std::size_t i = 0; i < bs; ++i) idx[i] = b0 + i;
        const std::vector<std::size_t> labels = labels_at(source, idx);
        std::vector<Tensor<float>> xs(bs);
        for (std::size_t i = 0; i < bs; ++i) xs[i] = images_at(source, {b0 + i});

        // Frozen source embeddings anchor the transport penalty.
        const Tensor<float> v0 = forward(model, images_at(source, idx)).v;

        std::vector<bool> frozen(bs, false);
        std::vector<double> last_obj(bs, 0.0);
        std::vector<std::vector<std::vector<float>>> snap(bs);
        double prev_mean = 0.0;

        for (std::size_t t = 0;; ++t) {
            Graph<float> g;
            if (t < cfg.t_max)
                for (std::size_t i = 0; i < bs; ++i)
                    if (!frozen[i])
                        for (Tensor<float>* p : samplers[b0 + i].learnables())
                            g.adopt(*p);

            std::vector<Tensor<float>> parts(bs);
            for (std::size_t i = 0; i < bs; ++i)
                parts[i] = samplers[b0 + i].apply(xs[i]);
            const Tensor<float> xt = o::concat(parts, 0);
            const ForwardOutput<float> fo = forward(model, xt);
            const Tensor<float> obj = maximization_objective_per_sample(
                fo.logits, labels, v0, fo.v, cfg.lambda, cfg.epsilon);

            for (std::size_t i = 0; i < bs; ++i) {
                const double oi = obj.values()[i];
                if (std::isfinite(oi)) {
                    last_obj[i] = oi;
                } else if (!frozen[i]) {
                    // Roll back to the iterate that last produced a finite
                    // objective and stop ascending this sample.
                    frozen[i] = true;
                    ++gs.warnings;
                    auto ls = samplers[b0 + i].learnables();
                    for (std::size_t j = 0; j < snap[i].size(); ++j)
                        ls[j]->values() = snap[i][j];
                }
            }
            double mean = 0.0;
            for (const double v : last_obj) mean += v;
            mean /= static_cast<double>(bs);
            if (t == 0)
                for (std::size_t i = 0; i < bs; ++i)
                    gs.sample_obj_start[b0 + i] = last_obj[i];

            if (t >= cfg.t_max) break;
            if (t > 0 && std::abs(mean - prev_mean) < cfg.early_stop_delta) break;
            prev_mean = mean;

            // Ascend the batch-mean objective: each sample's parameters see
            // its own gradient scaled by 1/batch.
            const Tensor<float> root =
                o::muls(o::sum_all(obj), 1.0f / static_cast<float>(bs));
            if (!root.requires_grad()) break;  // no live parameters left
            g.backward(root);
            for (std::size_t i = 0; i < bs; ++i) {
                if (frozen[i]) continue;
                auto ls = samplers[b0 + i].learnables();
                bool finite = true;
                for (const Tensor<float>* p : ls)
                    for (const float gv : p->grad())
                        if (!std::isfinite(gv)) finite = false;
                if (!finite) {
                    // A non-finite gradient would poison the parameters; keep
                    // this sample at its last finite iterate instead.
                    frozen[i] = true;
                    ++gs.warnings;
                    continue;
                }
                snap[i].resize(ls.size());
                for (std::size_t j = 0; j < ls.size(); ++j) {
                    snap[i][j] = ls[j]->values();
                    float* v = ls[j]->data();
                    const float* gr = ls[j]->grad().data();
                    for (std::size_t k = 0; k < ls[j]->numel(); ++k)
                        v[k] += static_cast<float>(cfg.beta) * gr[k];
                }
                samplers[b0 + i].project();
            }
        }

        // Materialize the final iterates, clamped into the pool's value range,
        // and score exactly what is stored.
        std::vector<Tensor<float>> parts(bs);
        for (std::size_t i = 0; i < bs; ++i)
            parts[i] = samplers[b0 + i].apply(xs[i]);
        Tensor<float> xf = o::concat(parts, 0);
        for (auto& v : xf.values()) v = std::clamp(v, 0.0f, 1.0f);
        const ForwardOutput<float> ff = forward(model, xf);
        const Tensor<float> obj_f = maximization_objective_per_sample(
            ff.logits, labels, v0, ff.v, cfg.lambda, cfg.epsilon);
        const Tensor<float> dist_f = feature_distance(v0, ff.v);
        for (std::size_t i = 0; i < bs; ++i) {
            const double oe = obj_f.values()[i];
            gs.sample_obj_end[b0 + i] = std::isfinite(oe) ? oe : last_obj[i];
            gs.mean_feat_dist += dist_f.values()[i] / static_cast<double>(n);
        }
        std::copy(xf.values().begin(), xf.values().end(),
                  out.images.data() + b0 * kPixels);
    }

    for (std::size_t i = 0; i < n; ++i) {
        gs.obj_start += gs.sample_obj_start[i] / static_cast<double>(n);
        gs.obj_end += gs.sample_obj_end[i] / static_cast<double>(n);
    }
    return out;
}

}  // namespace

void DomainPool::add(Dataset d) {
    generated.push_back(std::move(d));
    while (generated.size() > k) generated.pop_front();
}

std::size_t DomainPool::total_samples() const {
    std::size_t total = source.size();
    for (const Dataset& d : generated) total += d.size();
    return total;
}

double learning_rate(const TrainConfig& cfg, std::size_t epoch) {
    if (cfg.lr_schedule == LrSchedule::Step)
        return epoch >= 25 ? cfg.alpha * 0.1 : cfg.alpha;
    const double span = static_cast<double>(std::max<std::size_t>(cfg.epochs, 1));
    return cfg.alpha * 0.5 *
           (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) / span));
}

Dataset generate_domain(const ModelParams<float>& model, const Dataset& source,
                        const ChainDistribution& dist, const TrainConfig& cfg,
                        Rng& rng, GenStats* stats) {
    check_config(cfg);
    if (source.size() == 0) throw ContractError("generate_domain: empty source");
    std::vector<ChainSampler> samplers(source.size());
    for (auto& s : samplers) s.draw(dist, rng);
    return generate_impl(model, source, cfg, samplers, stats);
}

Dataset generate_domain_pixel(const ModelParams<float>& model, const Dataset& source,
                              const TrainConfig& cfg, Rng& rng, GenStats* stats) {
    check_config(cfg);
    if (source.size() == 0)
        throw ContractError("generate_domain_pixel: empty source");
    (void)rng;  // perturbations start at zero: nothing to draw
    std::vector<PixelSampler> samplers(source.size());
    for (auto& s : samplers) s.delta = Tensor<float>::zeros({1, 3, 32, 32});
    return generate_impl(model, source, cfg, samplers, stats);
}

MinimizeStats minimize_epoch(ModelParams<float>& model, const DomainPool& pool,
                             const TrainConfig& cfg, std::size_t epoch, Rng& rng) {
    check_config(cfg);
    if (pool.source.size() == 0) throw ContractError("minimize_epoch: empty pool");
    MinimizeStats ms;
    if (cfg.batches_per_epoch == 0) return ms;

    std::vector<const Dataset*> doms{&pool.source};
    for (const Dataset& d : pool.generated) doms.push_back(&d);
    std::vector<std::size_t> prefix{0};
    for (const Dataset* d : doms) prefix.push_back(prefix.back() + d->size());
    const std::size_t total = prefix.back();
    const double lr = learning_rate(cfg, epoch);
    const auto params = model.all();

    for (std::size_t it = 0; it < cfg.batches_per_epoch; ++it) {
        Tensor<float> x = Tensor<float>::zeros({cfg.batch, 3, 32, 32});
        std::vector<std::size_t> labels(cfg.batch);
        for (std::size_t b = 0; b < cfg.batch; ++b) {
            const std::size_t flat = rng.uniform_int(total);
            std::size_t di = 0;
            while (flat >= prefix[di + 1]) ++di;
            const std::size_t local = flat - prefix[di];
            std::copy(doms[di]->images.data() + local * kPixels,
                      doms[di]->images.data() + (local + 1) * kPixels,
                      x.data() + b * kPixels);
            labels[b] = doms[di]->labels[local];
        }

        Graph<float> g;
        for (Tensor<float>* p : params) g.adopt(*p);
        const ForwardOutput<float> fo = forward(model, x);
        LossBreakdown<float> lb;
        if (cfg.use_contrastive) {
            lb = minimization_loss(fo.logits, labels, fo.u, cfg.eta);
        } else {
            lb.cross_entropy = cross_entropy(fo.logits, labels);
            lb.contrastive = Tensor<float>::scalar(0);
            lb.entropy = entropy(fo.logits);
            lb.total = o::add(lb.cross_entropy, o::muls(lb.entropy, -cfg.eta));
        }

        if (!std::isfinite(lb.total.item())) {
            std::ostringstream os;
            os << "minimize: non-finite loss at epoch " << epoch + 1
               << " iteration " << it + 1 << " (lr " << lr << "): ce "
               << lb.cross_entropy.item() << ", contrastive "
               << lb.contrastive.item() << ", entropy " << lb.entropy.item()
               << "; parameter norms:";
            for (const auto& [name, tensor] : model.named()) {
                double norm = 0.0;
                for (const float v : tensor.values())
                    norm += static_cast<double>(v) * v;
                os << ' ' << name << '=' << std::sqrt(norm);
            }
            throw DivergenceError(os.str());
        }

        g.backward(lb.total);
        for (Tensor<float>* p : params) {
            float* v = p->data();
            const float* gr = p->grad().data();
            for (std::size_t k = 0; k < p->numel(); ++k)
                v[k] -= static_cast<float>(lr) * gr[k];
        }
        ms.ce += lb.cross_entropy.item() / static_cast<double>(cfg.batches_per_epoch);
        ms.contrastive +=
            lb.contrastive.item() / static_cast<double>(cfg.batches_per_epoch);
        ms.entropy += lb.entropy.item() / static_cast<double>(cfg.batches_per_epoch);
    }
    return ms;
}

double evaluate(const ModelParams<float>& model, const Dataset& d,
                std::size_t batch) {
    if (d.size() == 0) throw ContractError("evaluate: empty dataset");
    if (batch < 1) throw ContractError("evaluate: batch must be >= 1");
    std::size_t correct = 0;
    for (std::size_t b0 = 0; b0 < d.size(); b0 += batch) {
        const std::size_t bs = std::min(batch, d.size() - b0);
        std::vector<std::size_t> idx(bs);
        for (std::size_t i = 0; i < bs; ++i) idx[i] = b0 + i;
        const ForwardOutput<float> fo = forward(model, images_at(d, idx));
        const std::size_t classes = fo.logits.dim(1);
        for (std::size_t i = 0; i < bs; ++i) {
            const float* row = fo.logits.data() + i * classes;
            std::size_t best = 0;
            for (std::size_t c = 1; c < classes; ++c)
                if (row[c] > row[best]) best = c;
            if (best == d.labels[b0 + i]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(d.size());
}

std::string train_log_csv(const TrainLog& log) {
    std::ostringstream os;
    os << "epoch,ce,contrastive,entropy,max_obj_start,max_obj_end,mean_feat_dist";
    for (const std::string& d : log.domains) os << ",acc_" << d;
    os << ",seconds\n";
    for (const EpochStats& e : log.epochs) {
        if (e.domain_acc.size() != log.domains.size())
            throw ContractError("train log: row accuracy count does not match "
                                "the domain header");
        os << e.epoch << ',' << fmt(e.ce) << ',' << fmt(e.contrastive) << ','
           << fmt(e.entropy) << ',' << fmt(e.max_obj_start) << ','
           << fmt(e.max_obj_end) << ',' << fmt(e.mean_feat_dist);
        for (const double a : e.domain_acc) os << ',' << fmt(a);
        os << ',' << fmt(e.seconds) << '\n';
    }
    return os.str();
}

void write_train_log(const std::string& path, const TrainLog& log) {
    const std::string text = train_log_csv(log);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ContractError("train log: cannot open " + path);
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!f) throw ContractError("train log: short write to " + path);
}

TrainResult train(const TrainConfig& cfg, const Dataset& source,
                  const std::vector<Dataset>& eval_domains, GenKind kind) {
    check_config(cfg);
    if (source.size() == 0) throw ContractError("train: empty source dataset");
    if (source.classes < 2) throw ContractError("train: need at least 2 classes");

    TrainConfig c = cfg;
    if (c.batches_per_epoch == 0)
        c.batches_per_epoch = (source.size() + c.batch - 1) / c.batch;

    Rng master(c.seed);
    Rng init_rng = master.fork(1);
    TrainResult r{init_model<float>(source.classes, init_rng), {}};
    for (const Dataset& d : eval_domains) r.log.domains.push_back(d.name);

    DomainPool pool;
    pool.source = source;
    pool.k = c.pool_k;
    const ChainDistribution dist{c.l_max};
    const bool generating = kind != GenKind::None && c.pool_k > 0 && c.epochs > 0;

    for (std::size_t e = 0; e < c.epochs; ++e) {
        const auto t0 = std::chrono::steady_clock::now();
        // Both streams are forked unconditionally so a run without generation
        // consumes the master stream exactly like one with it.
        Rng min_rng = master.fork(2 * e + 2);
        Rng gen_rng = master.fork(2 * e + 3);

        EpochStats es;
        es.epoch = e + 1;
        const MinimizeStats ms = minimize_epoch(r.model, pool, c, e, min_rng);
        es.ce = ms.ce;
        es.contrastive = ms.contrastive;
        es.entropy = ms.entropy;

        if (generating) {
            GenStats gs;
            Dataset gen =
                kind == GenKind::Semantics
                    ? generate_domain(r.model, pool.source, dist, c, gen_rng, &gs)
                    : generate_domain_pixel(r.model, pool.source, c, gen_rng, &gs);
            gen.name = "gen" + std::to_string(e + 1);
            pool.add(std::move(gen));
            es.max_obj_start = gs.obj_start;
            es.max_obj_end = gs.obj_end;
            es.mean_feat_dist = gs.mean_feat_dist;
            r.log.ascent_warnings += gs.warnings;
        }

        for (const Dataset& d : eval_domains)
            es.domain_acc.push_back(evaluate(r.model, d));
        es.seconds =
            c.log_timing
                ? std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                                t0)
                      .count()
                : 0.0;
        r.log.epochs.push_back(std::move(es));
    }
    return r;
}

TrainResult train_erm(const TrainConfig& cfg, const Dataset& source,
                      const std::vector<Dataset>& eval_domains) {
    TrainConfig c = cfg;
    c.t_max = 0;
    c.pool_k = 0;
    c.eta = 0.0;
    c.use_contrastive = false;
    return train(c, source, eval_domains, GenKind::None);
}

}  // namespace advst
