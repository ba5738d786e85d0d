#include "sftnet/train.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <set>

#include <CLI11.hpp>

namespace sft {

// ---------------------------------------------------------------------------
// Config files: flat key=value with `#` comments. Keys mirror RunConfig
// field names; h/w/c/window seed the derived defaults, which the remaining
// keys may override.
// ---------------------------------------------------------------------------

namespace {

std::map<std::string, std::string> parse_kv(const std::string& text, const std::string& origin) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t\r");
        const auto b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key=value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        kv[key] = value;
    }
    return kv;
}

int64_t to_int(const std::string& v, const std::string& key) {
    try {
        size_t pos = 0;
        const int64_t x = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': cannot parse integer from '" + v + "'");
    }
}

double to_double(const std::string& v, const std::string& key) {
    try {
        size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': cannot parse real from '" + v + "'");
    }
}

bool to_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("key '" + key + "': expected true/false, got '" + v + "'");
}

std::vector<int64_t> to_int_list(const std::string& v, const std::string& key) {
    std::vector<int64_t> out;
    std::istringstream in(v);
    std::string item;
    while (std::getline(in, item, ',')) out.push_back(to_int(item, key));
    return out;
}

std::string read_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config file: " + path);
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

char fmt_buf[64];
std::string fmt_g(double v) {
    std::snprintf(fmt_buf, sizeof(fmt_buf), "%.9g", v);
    return fmt_buf;
}

}  // namespace

void RunConfig::validate() const {
    validate_config(model);
    weights.validate();
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (alpha <= 0.0) throw ConfigError("alpha must be positive");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
        throw ConfigError("adam betas must lie in [0,1)");
    if (adam_eps <= 0.0) throw ConfigError("adam_eps must be positive");
}

RunConfig parse_run_config_text(const std::string& text, const std::string& origin) {
    auto kv = parse_kv(text, origin);
    auto take = [&](const char* key) -> std::optional<std::string> {
        auto it = kv.find(key);
        if (it == kv.end()) return std::nullopt;
        std::string v = it->second;
        kv.erase(it);
        return v;
    };
    RunConfig cfg;
    // read the four leading knobs first so derived defaults are consistent
    int64_t ch = 256, cw = 256, cc = 128, cwin = 8;
    if (auto v = take("h")) ch = to_int(*v, "h");
    if (auto v = take("w")) cw = to_int(*v, "w");
    if (auto v = take("c")) cc = to_int(*v, "c");
    if (auto v = take("window")) cwin = to_int(*v, "window");
    cfg.model = make_config(ch, cw, cc, cwin);
    if (auto v = take("heads")) {
        auto list = to_int_list(*v, "heads");
        if (list.size() != 4) throw ConfigError("heads must list 4 values");
        std::copy(list.begin(), list.end(), cfg.model.heads.begin());
    }
    if (auto v = take("mlp_ratio")) cfg.model.mlp_ratio = to_double(*v, "mlp_ratio");
    if (auto v = take("sfea_channels")) {
        auto list = to_int_list(*v, "sfea_channels");
        if (list.size() != 3) throw ConfigError("sfea_channels must list 3 values");
        std::copy(list.begin(), list.end(), cfg.model.sfea_channels.begin());
    }
    if (auto v = take("out_channels")) cfg.model.out_channels = to_int(*v, "out_channels");
    if (auto v = take("use_rel_pos_bias")) cfg.model.use_rel_pos_bias = to_bool(*v, "use_rel_pos_bias");
    if (auto v = take("final_cout")) cfg.model.final_cout = to_int(*v, "final_cout");
    if (auto v = take("use_gelu_tanh")) cfg.model.use_gelu_tanh = to_bool(*v, "use_gelu_tanh");
    if (auto v = take("lambda_bce")) cfg.weights.lambda_bce = to_double(*v, "lambda_bce");
    if (auto v = take("lambda_dice")) cfg.weights.lambda_dice = to_double(*v, "lambda_dice");
    if (auto v = take("lambda_emb")) cfg.weights.lambda_emb = to_double(*v, "lambda_emb");
    if (auto v = take("alpha")) cfg.alpha = to_double(*v, "alpha");
    if (auto v = take("beta1")) cfg.beta1 = to_double(*v, "beta1");
    if (auto v = take("beta2")) cfg.beta2 = to_double(*v, "beta2");
    if (auto v = take("adam_eps")) cfg.adam_eps = to_double(*v, "adam_eps");
    if (auto v = take("batch_size")) cfg.batch_size = to_int(*v, "batch_size");
    if (auto v = take("epochs")) cfg.epochs = to_int(*v, "epochs");
    if (auto v = take("seed")) cfg.seed = uint64_t(to_int(*v, "seed"));
    if (auto v = take("data_dir")) cfg.data_dir = *v;
    if (auto v = take("ckpt_path")) cfg.ckpt_path = *v;
    if (auto v = take("log_path")) cfg.log_path = *v;
    if (auto v = take("emb_loss_enabled")) cfg.emb_loss_enabled = to_bool(*v, "emb_loss_enabled");
    if (auto v = take("resume")) cfg.resume = to_bool(*v, "resume");
    if (!kv.empty()) throw ConfigError(origin + ": unknown key '" + kv.begin()->first + "'");
    return cfg;
}

RunConfig parse_run_config(const std::string& path) {
    return parse_run_config_text(read_file(path), path);
}

SynthSpec parse_synth_spec(const std::string& path) {
    auto kv = parse_kv(read_file(path), path);
    SynthSpec spec;
    auto take_int = [&](const char* key, int64_t& field) {
        auto it = kv.find(key);
        if (it != kv.end()) {
            field = to_int(it->second, key);
            kv.erase(it);
        }
    };
    take_int("count", spec.count);
    take_int("h", spec.h);
    take_int("w", spec.w);
    take_int("area_min", spec.area_min);
    take_int("area_max", spec.area_max);
    take_int("blobs_min", spec.blobs_min);
    take_int("blobs_max", spec.blobs_max);
    take_int("smooth_radius", spec.smooth_radius);
    take_int("distractors_min", spec.distractors_min);
    take_int("distractors_max", spec.distractors_max);
    take_int("split_threshold_px", spec.split_threshold_px);
    if (auto it = kv.find("noise_amplitude"); it != kv.end()) {
        spec.noise_amplitude = to_double(it->second, "noise_amplitude");
        kv.erase(it);
    }
    if (auto it = kv.find("seed"); it != kv.end()) {
        spec.seed = uint64_t(to_int(it->second, "seed"));
        kv.erase(it);
    }
    if (!kv.empty()) throw ConfigError(path + ": unknown key '" + kv.begin()->first + "'");
    try {
        spec.validate();
    } catch (const ParameterError& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return spec;
}

RunConfig full_scale_preset() {
    RunConfig cfg;
    cfg.model = make_config(256, 256, 128, 8);
    return cfg;  // b=8, 100 epochs, alpha=1e-4, lambdas 0.4/0.6/0.01
}

RunConfig toy_overfit_preset() {
    RunConfig cfg;
    cfg.model = make_config(64, 64, 32, 4);
    cfg.alpha = 1e-3;
    cfg.epochs = 150;  // 16 samples at batch 8 -> 2 steps/epoch -> 300 steps
    cfg.seed = 7;
    return cfg;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

namespace {

std::vector<int64_t> epoch_permutation(int64_t n, uint64_t seed, int64_t epoch) {
    std::vector<int64_t> p(size_t(n));
    std::iota(p.begin(), p.end(), 0);
    Prng rng(splitmix64(seed + uint64_t(epoch)));
    for (int64_t i = n - 1; i > 0; --i) std::swap(p[size_t(i)], p[size_t(rng.uniform_int(0, i))]);
    return p;
}

Tensor<float> batch_images(const std::vector<SegmentationSample>& samples,
                           const std::vector<int64_t>& idx) {
    const int64_t B = int64_t(idx.size());
    const int64_t H = samples[size_t(idx[0])].image.shape()[0];
    const int64_t W = samples[size_t(idx[0])].image.shape()[1];
    std::vector<float> out(size_t(B * H * W * 3));
    for (int64_t b = 0; b < B; ++b) {
        const auto& v = samples[size_t(idx[size_t(b)])].image.values();
        float* dst = out.data() + b * H * W * 3;
        for (int64_t i = 0; i < H * W; ++i) dst[3 * i] = dst[3 * i + 1] = dst[3 * i + 2] = v[size_t(i)];
    }
    return Tensor<float>::from_data({B, H, W, 3}, std::move(out));
}

Tensor<float> batch_masks(const std::vector<SegmentationSample>& samples,
                          const std::vector<int64_t>& idx) {
    const int64_t B = int64_t(idx.size());
    const int64_t H = samples[size_t(idx[0])].mask.shape()[0];
    const int64_t W = samples[size_t(idx[0])].mask.shape()[1];
    std::vector<float> out(size_t(B * H * W));
    for (int64_t b = 0; b < B; ++b) {
        const auto& v = samples[size_t(idx[size_t(b)])].mask.values();
        std::copy(v.begin(), v.end(), out.begin() + b * H * W);
    }
    return Tensor<float>::from_data({B, H, W, 1}, std::move(out));
}

}  // namespace

TrainResult cmd_train(const RunConfig& cfg) {
    cfg.validate();
    Dataset ds = load_dataset(cfg.data_dir);
    auto& samples = ds.train;
    if (samples.empty()) throw ConfigError("training split of " + cfg.data_dir + " is empty");
    const Shape expect{cfg.model.h, cfg.model.w, 1};
    for (const auto& s : samples)
        if (s.image.shape() != expect)
            throw DimensionError("sample " + s.id + " has shape " + shape_str(s.image.shape()) +
                                 " but the config expects " + shape_str(expect));

    const int64_t n = int64_t(samples.size());
    const int64_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;

    Model<float> model;
    AdamState<float> adam;
    int64_t start_epoch = 0;
    if (cfg.resume) {
        auto ck = load_checkpoint<float>(cfg.ckpt_path);
        require_same_config(cfg.model, ck.cfg);
        model = restore_model(ck);
        if (!ck.adam) throw FormatError("checkpoint " + cfg.ckpt_path + " has no optimizer state");
        adam = *ck.adam;
        start_epoch = adam.t / steps_per_epoch;  // checkpoints land on epoch boundaries
    } else {
        model = build<float>(cfg.model, cfg.seed);
        adam = AdamState<float>::init(model.store, cfg.alpha, cfg.beta1, cfg.beta2, cfg.adam_eps);
    }

    std::ofstream log(cfg.log_path, cfg.resume ? std::ios::app : std::ios::trunc);
    if (!log) throw IoError("cannot open loss log for write: " + cfg.log_path);
    if (!cfg.resume) log << "step,epoch,bce,dice,emb,total\n";

    LossWeights w = cfg.weights;
    if (!cfg.emb_loss_enabled) w.lambda_emb = 0.0;

    int64_t step = adam.t;
    double final_total = 0.0;
    for (int64_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        const auto order = epoch_permutation(n, cfg.seed, epoch);
        for (int64_t off = 0; off < n; off += cfg.batch_size) {
            const int64_t end = std::min(off + cfg.batch_size, n);
            std::vector<int64_t> idx(order.begin() + off, order.begin() + end);
            Tensor<float> x = batch_images(samples, idx);
            Tensor<float> y = batch_masks(samples, idx);
            try {
                ForwardTrace<float> trace = forward(model, x, RunMode::Train);
                LossBreakdown<float> loss = total_loss(trace.probs, y, trace, w);
                model.store.zero_grad();
                backward(loss.total);
                adam_step(model.store, adam);
                ++step;
                log << step << "," << epoch + 1 << "," << fmt_g(double(loss.bce.item())) << ","
                    << fmt_g(double(loss.dice.item())) << "," << fmt_g(double(loss.emb.item()))
                    << "," << fmt_g(double(loss.total.item())) << "\n";
                final_total = double(loss.total.item());
            } catch (const NumericError& e) {
                throw NumericError(std::string(e.what()) + "; aborting at training step " +
                                   std::to_string(step + 1));
            }
        }
        save_checkpoint(cfg.ckpt_path, model, &adam, cfg.seed);
    }
    log.flush();
    if (!log) throw IoError("loss log write failed: " + cfg.log_path);
    return {step, cfg.epochs, final_total};
}

// ---------------------------------------------------------------------------
// Evaluation / inference
// ---------------------------------------------------------------------------

EvalResult evaluate_metrics(const std::vector<std::string>& ids,
                            const std::vector<Tensor<float>>& predictions,
                            const std::vector<Tensor<float>>& ground_truth,
                            const std::string& csv_path) {
    if (ids.size() != predictions.size() || ids.size() != ground_truth.size())
        throw DimensionError("evaluate_metrics: ids/predictions/ground truth lengths differ");
    if (ids.empty()) throw ParameterError("evaluate_metrics: empty evaluation set");
    EvalResult res;
    ConfusionCounts pooled;
    double mtp = 0, mfp = 0, mfn = 0, mtn = 0;
    for (size_t i = 0; i < ids.size(); ++i) {
        SegMetrics m = seg_metrics(predictions[i], ground_truth[i]);
        pooled.tp += m.counts.tp;
        pooled.fp += m.counts.fp;
        pooled.fn += m.counts.fn;
        pooled.tn += m.counts.tn;
        res.mean_dice += m.dice;
        res.mean_miou += m.miou;
        res.mean_sen += m.sen;
        res.mean_spe += m.spe;
        mtp += double(m.counts.tp);
        mfp += double(m.counts.fp);
        mfn += double(m.counts.fn);
        mtn += double(m.counts.tn);
        res.rows.push_back({ids[i], m});
    }
    const double k = double(ids.size());
    res.mean_dice /= k;
    res.mean_miou /= k;
    res.mean_sen /= k;
    res.mean_spe /= k;
    res.pooled = metrics_from_counts(pooled);
    if (!csv_path.empty()) {
        std::ofstream f(csv_path);
        if (!f) throw IoError("cannot open metrics CSV for write: " + csv_path);
        f << "id,tp,fp,fn,tn,dice,miou,sen,spe\n";
        for (const auto& r : res.rows)
            f << r.id << "," << r.m.counts.tp << "," << r.m.counts.fp << "," << r.m.counts.fn << ","
              << r.m.counts.tn << "," << fmt_g(r.m.dice) << "," << fmt_g(r.m.miou) << ","
              << fmt_g(r.m.sen) << "," << fmt_g(r.m.spe) << "\n";
        f << "mean," << fmt_g(mtp / k) << "," << fmt_g(mfp / k) << "," << fmt_g(mfn / k) << ","
          << fmt_g(mtn / k) << "," << fmt_g(res.mean_dice) << "," << fmt_g(res.mean_miou) << ","
          << fmt_g(res.mean_sen) << "," << fmt_g(res.mean_spe) << "\n";
        if (!f) throw IoError("metrics CSV write failed: " + csv_path);
    }
    return res;
}

namespace {
Tensor<float> predict_mask(Model<float>& model, const Tensor<float>& image) {
    NoGradGuard ng;
    const int64_t H = image.shape()[0], W = image.shape()[1];
    Tensor<float> gray3 = gray_to_3ch(image);
    Tensor<float> x = reshape(gray3, {1, H, W, 3});
    ForwardTrace<float> trace = forward(model, x, RunMode::Eval);
    std::vector<float> mask(size_t(H * W));
    const auto& p = trace.probs.values();
    for (size_t i = 0; i < mask.size(); ++i) mask[i] = p[i] >= 0.5f ? 1.0f : 0.0f;
    return Tensor<float>::from_data({H, W, 1}, std::move(mask));
}
}  // namespace

EvalResult cmd_eval(const std::string& ckpt_path, const std::string& data_dir,
                    const std::string& out_csv, bool use_train_split) {
    auto ck = load_checkpoint<float>(ckpt_path);
    Model<float> model = restore_model(ck);
    Dataset ds = load_dataset(data_dir);
    const auto& samples = use_train_split ? ds.train : ds.test;
    if (samples.empty())
        throw ConfigError(std::string(use_train_split ? "train" : "test") + " split of " + data_dir +
                          " is empty");
    std::vector<std::string> ids;
    std::vector<Tensor<float>> preds, gts;
    const Shape expect{model.cfg.h, model.cfg.w, 1};
    for (const auto& s : samples) {
        if (s.image.shape() != expect)
            throw DimensionError("sample " + s.id + " has shape " + shape_str(s.image.shape()) +
                                 " but the checkpoint expects " + shape_str(expect));
        ids.push_back(s.id);
        preds.push_back(predict_mask(model, s.image));
        gts.push_back(s.mask);
    }
    return evaluate_metrics(ids, preds, gts, out_csv);
}

int64_t cmd_infer(const std::string& ckpt_path, const std::string& in_pgm,
                  const std::string& out_pgm, bool auto_resize) {
    auto ck = load_checkpoint<float>(ckpt_path);
    Model<float> model = restore_model(ck);
    Tensor<float> img = load_pgm(in_pgm);
    const Shape expect{model.cfg.h, model.cfg.w, 1};
    if (img.shape() != expect) {
        if (!auto_resize)
            throw DimensionError("image " + in_pgm + " has shape " + shape_str(img.shape()) +
                                 " but the checkpoint expects " + shape_str(expect) +
                                 " (pass --resize to rescale)");
        img = resize(img, model.cfg.h, model.cfg.w, ResizeMode::Bilinear);
    }
    Tensor<float> mask = predict_mask(model, img);
    save_mask_pgm(out_pgm, mask);
    int64_t area = 0;
    for (float v : mask.values()) area += v != 0.0f ? 1 : 0;
    return area;
}

// ---------------------------------------------------------------------------
// Gradient check harness
// ---------------------------------------------------------------------------

GradCheckReport run_gradcheck(const ModelConfig& cfg, uint64_t seed, int64_t coords_per_tensor,
                              double fd_step, const std::string& corrupt_tensor,
                              double corrupt_delta) {
    if (cfg.h != 32 || cfg.w != 32)
        throw ConfigError("grad-check runs only on the 32x32 toy resolution, got " +
                          std::to_string(cfg.h) + "x" + std::to_string(cfg.w));
    validate_config(cfg);
    if (coords_per_tensor < 1) throw ParameterError("coords_per_tensor must be >= 1");

    Model<double> model = build<double>(cfg, seed);

    SynthSpec sp;
    sp.count = 2;
    sp.h = sp.w = 32;
    sp.area_min = 8;
    sp.area_max = 40;
    sp.noise_amplitude = 0.15;
    sp.smooth_radius = 1;
    sp.distractors_min = sp.distractors_max = 1;
    sp.seed = derive_seed(seed, 0x6d617373);
    auto samples = generate_synthetic(sp);
    Tensor<double> x = convert<double>(batch_images(samples, {0, 1}));
    Tensor<double> y = convert<double>(batch_masks(samples, {0, 1}));
    const LossWeights w;

    auto loss_value = [&]() {
        NoGradGuard ng;
        ForwardTrace<double> trace = forward(model, x, RunMode::Train);
        return double(total_loss(trace.probs, y, trace, w).total.item());
    };

    model.store.zero_grad();
    {
        ForwardTrace<double> trace = forward(model, x, RunMode::Train);
        backward(total_loss(trace.probs, y, trace, w).total);
    }
    if (!corrupt_tensor.empty()) {
        Tensor<double>* t = model.store.find(corrupt_tensor);
        if (!t) throw ParameterError("unknown tensor for corruption hook: " + corrupt_tensor);
        t->grad()[0] += corrupt_delta;
    }

    GradCheckReport report;
    int64_t tensor_index = 0;
    for (auto& e : model.store.entries) {
        if (!e.trainable) continue;
        Prng rng(derive_seed(seed ^ 0x67726164ull, uint64_t(tensor_index++)));
        const int64_t sz = e.tensor.size();
        std::vector<int64_t> coords;
        if (sz <= coords_per_tensor) {
            coords.resize(size_t(sz));
            std::iota(coords.begin(), coords.end(), 0);
        } else {
            std::set<int64_t> seen;
            while (int64_t(seen.size()) < coords_per_tensor) seen.insert(rng.uniform_int(0, sz - 1));
            coords.assign(seen.begin(), seen.end());
        }
        double max_err = 0.0;
        auto& values = e.tensor.values();
        const auto& grad = e.tensor.grad();
        for (int64_t c : coords) {
            const double orig = values[size_t(c)];
            values[size_t(c)] = orig + fd_step;
            const double lp = loss_value();
            values[size_t(c)] = orig - fd_step;
            const double lm = loss_value();
            values[size_t(c)] = orig;
            const double fd = (lp - lm) / (2.0 * fd_step);
            const double an = grad[size_t(c)];
            const double err = std::fabs(an - fd) / std::max({std::fabs(an), std::fabs(fd), 1.0});
            max_err = std::max(max_err, err);
        }
        report.tensors.push_back({e.name, max_err});
        report.worst = std::max(report.worst, max_err);
    }
    return report;
}

// ---------------------------------------------------------------------------
// CLI
// ---------------------------------------------------------------------------

namespace {
int dispatch(const std::vector<std::string>& args) {
    CLI::App app{"swin-sftnet micro-mass segmentation toolkit"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    std::string gen_spec, gen_out;
    gen->add_option("--spec", gen_spec, "synth spec file (key=value)")->required();
    gen->add_option("--out", gen_out, "output dataset directory")->required();

    auto* train = app.add_subcommand("train", "train a model");
    std::string train_cfg, train_data, train_ckpt, train_log;
    bool no_emb = false, resume = false;
    train->add_option("--config", train_cfg, "run config file")->required();
    train->add_option("--data", train_data, "override data_dir");
    train->add_option("--ckpt", train_ckpt, "override ckpt_path");
    train->add_option("--log", train_log, "override log_path");
    train->add_flag("--no-emb-loss", no_emb, "train with the embedding loss weight set to 0");
    train->add_flag("--resume", resume, "resume from ckpt_path");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string eval_ckpt, eval_data, eval_out = "metrics.csv", eval_split = "test";
    eval->add_option("--ckpt", eval_ckpt, "checkpoint file")->required();
    eval->add_option("--data", eval_data, "dataset directory")->required();
    eval->add_option("--out", eval_out, "metrics CSV path");
    eval->add_option("--split", eval_split, "test|train")->check(CLI::IsMember({"test", "train"}));

    auto* infer = app.add_subcommand("infer", "segment one image");
    std::string in_ckpt, in_img, in_out;
    bool in_resize = false;
    infer->add_option("--ckpt", in_ckpt, "checkpoint file")->required();
    infer->add_option("--in", in_img, "input PGM image")->required();
    infer->add_option("--out", in_out, "output PGM mask")->required();
    infer->add_flag("--resize", in_resize, "bilinear-resize input to the model resolution");

    auto* gc = app.add_subcommand("grad-check", "finite-difference gradient audit");
    std::string gc_cfg;
    double gc_tol = 1e-5;
    uint64_t gc_seed = 1;
    gc->add_option("--config", gc_cfg, "run config file (32x32 toy scale)")->required();
    gc->add_option("--tol", gc_tol, "max relative error tolerance");
    gc->add_option("--seed", gc_seed, "build/probe seed");

    auto* audit = app.add_subcommand("audit", "print the dimension ladder and parameter count");
    std::string audit_cfg;
    audit->add_option("--config", audit_cfg, "run config file")->required();

    std::vector<const char*> argv;
    argv.push_back("sftnet");
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(int(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 3;
    }

    if (gen->parsed()) {
        SynthSpec spec = parse_synth_spec(gen_spec);
        auto samples = generate_synthetic(spec);
        write_dataset(gen_out, samples, spec.split_threshold_px);
        std::cout << "wrote " << samples.size() << " samples to " << gen_out << "\n";
        return 0;
    }
    if (train->parsed()) {
        RunConfig cfg = parse_run_config(train_cfg);
        if (!train_data.empty()) cfg.data_dir = train_data;
        if (!train_ckpt.empty()) cfg.ckpt_path = train_ckpt;
        if (!train_log.empty()) cfg.log_path = train_log;
        if (no_emb) {
            cfg.emb_loss_enabled = false;
            cfg.weights.lambda_emb = 0.0;
        }
        if (resume) cfg.resume = true;
        TrainResult r = cmd_train(cfg);
        std::cout << "trained " << r.steps << " steps over " << r.epochs << " epochs, final total loss "
                  << fmt_g(r.final_total) << "\n";
        std::cout << "checkpoint: " << cfg.ckpt_path << "\nloss log: " << cfg.log_path << "\n";
        return 0;
    }
    if (eval->parsed()) {
        EvalResult r = cmd_eval(eval_ckpt, eval_data, eval_out, eval_split == "train");
        std::cout << "images: " << r.rows.size() << "\n";
        std::cout << "mean  dice " << fmt_g(r.mean_dice) << "  miou " << fmt_g(r.mean_miou)
                  << "  sen " << fmt_g(r.mean_sen) << "  spe " << fmt_g(r.mean_spe) << "\n";
        std::cout << "pooled dice " << fmt_g(r.pooled.dice) << "  miou " << fmt_g(r.pooled.miou)
                  << "  sen " << fmt_g(r.pooled.sen) << "  spe " << fmt_g(r.pooled.spe) << "\n";
        std::cout << "metrics CSV: " << eval_out << "\n";
        return 0;
    }
    if (infer->parsed()) {
        const int64_t area = cmd_infer(in_ckpt, in_img, in_out, in_resize);
        std::cout << "mass area: " << area << " px\n";
        return 0;
    }
    if (gc->parsed()) {
        RunConfig cfg = parse_run_config(gc_cfg);
        GradCheckReport report = run_gradcheck(cfg.model, gc_seed);
        for (const auto& t : report.tensors)
            std::cout << t.name << " " << fmt_g(t.max_rel_err) << "\n";
        auto bad = report.failures(gc_tol);
        std::cout << "worst " << fmt_g(report.worst) << " (tolerance " << fmt_g(gc_tol) << ")\n";
        if (!bad.empty()) {
            std::cerr << "tolerance exceeded by:";
            for (const auto& n : bad) std::cerr << " " << n;
            std::cerr << "\n";
            return 1;
        }
        return 0;
    }
    if (audit->parsed()) {
        RunConfig cfg = parse_run_config(audit_cfg);
        std::cout << audit_report(cfg.model);
        return 0;
    }
    return 3;
}
}  // namespace

int run_cli(const std::vector<std::string>& args) {
    try {
        return dispatch(args);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 3;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 2;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace sft
