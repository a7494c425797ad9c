#include "multidepth/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"

namespace multidepth {

namespace {

fs::path first_existing(const fs::path& dir, std::initializer_list<const char*> names) {
    for (const char* n : names)
        if (fs::exists(dir / n)) return dir / n;
    return {};
}

} // namespace

Example load_example(const fs::path& dir, const PipelineConfig& cfg, bool require_gt) {
    Example ex;
    ex.name = dir.filename().string();
    const fs::path rgb_path = dir / "rgb.png";
    const fs::path initial_path = first_existing(dir, {"initial.png", "initial.pfm"});
    const fs::path gt_path = first_existing(dir, {"depth.png", "depth.pfm"});
    if (!fs::exists(rgb_path)) fail_input(dir.string() + ": missing rgb.png");
    if (initial_path.empty()) fail_input(dir.string() + ": missing initial.png or initial.pfm");
    if (require_gt && gt_path.empty()) fail_input(dir.string() + ": missing depth.png or depth.pfm");

    const ImageTensor rgb = load_image_png(rgb_path);
    const DepthMap initial = load_depth(initial_path);
    const CameraIntrinsics K = load_intrinsics(dir / "intrinsics.json");
    MaskSet masks;
    if (fs::is_directory(dir / "masks")) masks = load_masks(dir / "masks");
    if (rgb.height() != initial.height || rgb.width() != initial.width)
        fail_input(dir.string() + ": rgb.png and " + initial_path.filename().string() + " differ in size");

    const FittedInput fit = fit_to_resolution(rgb, initial, masks, K, cfg.height, cfg.width, cfg.resize_policy);
    ex.rgb = fit.rgb;
    ex.initial = fit.depth;
    ex.masks = fit.masks;
    ex.K = fit.K;
    if (!gt_path.empty()) {
        const DepthMap gt = load_depth(gt_path);
        if (gt.height != rgb.height() || gt.width != rgb.width())
            fail_input(dir.string() + ": ground truth differs in size from rgb.png");
        ex.gt = fit_to_resolution(rgb, gt, MaskSet{}, K, cfg.height, cfg.width, cfg.resize_policy).depth;
    }
    return ex;
}

std::vector<fs::path> list_scenes(const fs::path& dataset_dir) {
    if (!fs::is_directory(dataset_dir)) fail_input(dataset_dir.string() + " is not a directory");
    std::vector<fs::path> out;
    const fs::path manifest = dataset_dir / "manifest.json";
    if (fs::exists(manifest)) {
        std::ifstream in(manifest);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            fail_input(manifest.string() + ": " + e.what());
        }
        if (!j.contains("scenes") || !j["scenes"].is_array()) fail_input(manifest.string() + ": no scenes array");
        for (const auto& s : j["scenes"]) out.push_back(dataset_dir / s.get<std::string>());
        return out;
    }
    for (const auto& e : fs::directory_iterator(dataset_dir))
        if (e.is_directory() && fs::exists(e.path() / "rgb.png")) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<Example> load_dataset(const fs::path& dataset_dir, const PipelineConfig& cfg, bool require_gt) {
    std::vector<Example> out;
    for (const auto& p : list_scenes(dataset_dir)) out.push_back(load_example(p, cfg, require_gt));
    return out;
}

DepthMap refine_iterations(const RNetWeights& weights, const ImageTensor& rgb, const DepthMap& current,
                           const MaskSet& masks, const PipelineConfig& cfg, std::uint64_t seed, int count,
                           int start_iteration, const IterationCallback& callback) {
    if (count < 0 || start_iteration < 0) fail_input("iteration counts must be non-negative");
    IterationSetup setup;
    setup.rgb = &rgb;
    setup.masks = &masks;
    setup.weights = &weights;
    setup.sampler = cfg.sampler;
    setup.mrcm = cfg.mrcm;
    setup.noise_sigma = weights.config.depth_noise_sigma;
    setup.threads = cfg.effective_threads();
    const Rng root(seed);
    DepthMap depth = current;
    for (int i = 0; i < count; ++i) {
        const int iteration = start_iteration + i;
        Rng rng = root.derive(static_cast<std::uint64_t>(iteration));
        depth = run_iteration(setup, depth, rng);
        for (std::size_t p = 0; p < depth.size(); ++p)
            if (depth.valid[p] && !(std::isfinite(depth.depth[p]) && depth.depth[p] > 0))
                fail_numeric("iteration " + std::to_string(iteration + 1) + " produced a non-finite depth at pixel (" +
                             std::to_string(p % static_cast<std::size_t>(depth.width)) + ", " +
                             std::to_string(p / static_cast<std::size_t>(depth.width)) + ")");
        if (callback) callback(iteration + 1, depth);
    }
    return depth;
}

template <class T>
LossBreakdown evaluate_objective(const BasicRNetWeights<T>& weights, const ObjectiveInput& in,
                                 const SamplerConfig& sampler, const LossWeights& losses, Rng& rng,
                                 BasicRNetWeights<T>* grads) {
    if (!in.rgb || !in.depth || !in.gt) fail_input("objective needs rgb, depth and ground truth");
    const MaskSet empty_masks;
    const MaskSet& masks = in.masks ? *in.masks : empty_masks;
    const double sigma = weights.config.depth_noise_sigma;

    // Draw order: noise field, then the sample batch.
    const std::vector<float> noise = draw_log_noise(in.depth->height, in.depth->width, sigma, rng);
    const SampleBatch batch = build_sample_batch(*in.rgb, *in.depth, masks, sampler, rng);
    const std::size_t n = batch.samples.size();

    // Noise-free refinement of every sample; index 0 is the Full sample.
    std::vector<RefineCache<T>> caches(n);
    std::vector<BasicDepthMap<T>> refined(n);
    for (std::size_t i = 0; i < n; ++i)
        refined[i] = refine_view(weights, batch.samples[i].rgb, batch.samples[i].depth, {}, grads ? &caches[i] : nullptr);

    RefineCache<T> noisy_cache;
    const bool separate_noisy = !noise.empty();
    BasicDepthMap<T> noisy;
    if (separate_noisy) noisy = refine_view(weights, *in.rgb, *in.depth, noise, grads ? &noisy_cache : nullptr);
    const BasicDepthMap<T>& main_pred = separate_noisy ? noisy : refined[0];

    const BasicDepthMap<T> gt = depth_cast<T>(*in.gt);
    BasicDepthMap<T> grad_main(main_pred.height, main_pred.width);
    const T lmse = lambda_mse(main_pred, gt, in.K, losses.lambda, losses.z_mode, grads ? &grad_main : nullptr);

    std::vector<RefinedView<T>> puds, crops, segs;
    std::vector<std::size_t> pud_idx, crop_idx, seg_idx;
    for (std::size_t i = 1; i < n; ++i) {
        const RefinedView<T> v{&batch.samples[i], &refined[i]};
        switch (batch.samples[i].kind) {
        case SampleKind::Pud: puds.push_back(v); pud_idx.push_back(i); break;
        case SampleKind::Crop: crops.push_back(v); crop_idx.push_back(i); break;
        case SampleKind::Seg: segs.push_back(v); seg_idx.push_back(i); break;
        case SampleKind::Full: break;
        }
    }
    const BasicDepthMap<T>& full = refined[0];
    const double delta = losses.huber_delta;
    const ConsistencyValue pud = pud_consistency_from(puds, full, delta);
    const ConsistencyValue sub = view_consistency_from(crops, full, delta);
    const ConsistencyValue seg = view_consistency_from(segs, full, delta);
    const LossBreakdown out = total_loss(static_cast<double>(lmse), pud.value, sub.value, seg.value, losses);
    if (!grads) return out;

    std::vector<BasicDepthMap<T>> grad_views(n);
    for (std::size_t i = 0; i < n; ++i) grad_views[i] = BasicDepthMap<T>(refined[i].height, refined[i].width);
    auto pointers = [&](const std::vector<std::size_t>& idx) {
        std::vector<BasicDepthMap<T>*> p;
        for (std::size_t i : idx) p.push_back(&grad_views[i]);
        return p;
    };
    const T ws = static_cast<T>(losses.w_sample);
    auto gp = pointers(pud_idx);
    auto gc = pointers(crop_idx);
    auto gs = pointers(seg_idx);
    pud_consistency_backward(puds, full, delta, ws * static_cast<T>(losses.lambda_sample[0]), gp, grad_views[0]);
    view_consistency_backward(crops, full, delta, ws * static_cast<T>(losses.lambda_sample[1]), gc, grad_views[0]);
    view_consistency_backward(segs, full, delta, ws * static_cast<T>(losses.lambda_sample[2]), gs, grad_views[0]);

    if (separate_noisy) {
        refine_view_backward(weights, noisy_cache, grad_main, *grads);
    } else {
        for (std::size_t p = 0; p < grad_main.size(); ++p) grad_views[0].depth[p] += grad_main.depth[p];
    }
    for (std::size_t i = 0; i < n; ++i) refine_view_backward(weights, caches[i], grad_views[i], *grads);
    return out;
}

template LossBreakdown evaluate_objective(const BasicRNetWeights<float>&, const ObjectiveInput&, const SamplerConfig&,
                                          const LossWeights&, Rng&, BasicRNetWeights<float>*);
template LossBreakdown evaluate_objective(const BasicRNetWeights<double>&, const ObjectiveInput&,
                                          const SamplerConfig&, const LossWeights&, Rng&, BasicRNetWeights<double>*);

int stage_of_epoch(const Schedule& schedule, int epoch) {
    const auto lengths = schedule.stage_lengths();
    int start = 0;
    for (std::size_t s = 0; s < lengths.size(); ++s) {
        if (epoch < start + lengths[s]) return static_cast<int>(s);
        start += lengths[s];
    }
    return static_cast<int>(lengths.size()) - 1;
}

namespace {

constexpr std::uint64_t kInitStream = 0x696e6974;      // "init"
constexpr std::uint64_t kOrderStream = 0x6f72646572;   // "order"
constexpr std::uint64_t kStepStream = 0x73746570;      // "step"
constexpr std::uint64_t kFeedStream = 0x66656564;      // "feed"

int stage_start(const Schedule& schedule, int stage) {
    const auto lengths = schedule.stage_lengths();
    int start = 0;
    for (int s = 0; s < stage; ++s) start += lengths[static_cast<std::size_t>(s)];
    return start;
}

std::vector<std::size_t> epoch_order(std::uint64_t seed, int epoch, std::size_t n) {
    Rng rng = Rng(mix_seed(seed, kOrderStream)).derive(static_cast<std::uint64_t>(epoch));
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_int(i)]);
    return order;
}

// Input depths for a feedback stage: example j is refined for a uniformly
// drawn number of cycles in [0, iterations).
std::vector<DepthMap> feedback_inputs(const std::vector<Example>& data, const RNetWeights& weights,
                                      const PipelineConfig& cfg, int epoch, int iterations) {
    std::vector<DepthMap> out;
    const Rng root(mix_seed(cfg.seed, kFeedStream));
    for (std::size_t j = 0; j < data.size(); ++j) {
        Rng rng = root.derive(mix_seed(static_cast<std::uint64_t>(epoch), j));
        const int cycles = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(iterations)));
        out.push_back(refine_iterations(weights, data[j].rgb, data[j].initial, data[j].masks, cfg, rng.next_u64(),
                                        cycles));
    }
    return out;
}

void write_atomically(const WeightsFile& file, const fs::path& path) {
    fs::path tmp = path;
    tmp += ".tmp";
    save_weights(file, tmp);
    fs::rename(tmp, path);
}

WeightsFile make_checkpoint(const RNetWeights& weights, const OptimState& state, int next_epoch,
                            const std::vector<DepthMap>& feedback) {
    WeightsFile f = to_checkpoint(weights, state, static_cast<std::uint64_t>(next_epoch));
    for (std::size_t j = 0; j < feedback.size(); ++j) {
        const DepthMap& d = feedback[j];
        NamedTensor t{"feedback." + std::to_string(j),
                      {static_cast<std::uint32_t>(d.height), static_cast<std::uint32_t>(d.width)},
                      std::vector<float>(d.size(), 0.0f)};
        for (std::size_t p = 0; p < d.size(); ++p) t.data[p] = d.valid[p] ? d.depth[p] : 0.0f;
        f.entries.push_back(std::move(t));
    }
    return f;
}

std::vector<DepthMap> feedback_from_checkpoint(const WeightsFile& f, std::size_t count) {
    std::vector<DepthMap> out;
    for (std::size_t j = 0; j < count; ++j) {
        const NamedTensor* t = f.find("feedback." + std::to_string(j));
        if (!t) return {};
        if (t->dims.size() != 2) fail_input("checkpoint feedback tensor has the wrong rank");
        DepthMap d(static_cast<int>(t->dims[0]), static_cast<int>(t->dims[1]));
        for (std::size_t p = 0; p < d.size(); ++p) {
            d.depth[p] = t->data[p];
            d.valid[p] = t->data[p] > 0.0f ? 1 : 0;
        }
        out.push_back(std::move(d));
    }
    return out;
}

nlohmann::ordered_json log_json(const EpochLog& e) {
    nlohmann::ordered_json j;
    j["epoch"] = e.epoch;
    j["stage"] = e.stage;
    j["stage_iterations"] = e.stage_iterations;
    j["lr"] = e.lr;
    j["steps"] = e.steps;
    j["lambda_mse"] = e.mean.lambda_mse;
    j["pud"] = e.mean.pud;
    j["sub"] = e.mean.sub;
    j["seg"] = e.mean.seg;
    j["sample"] = e.mean.sample;
    j["total"] = e.mean.total;
    return j;
}

} // namespace

TrainResult train(const std::vector<Example>& data, const PipelineConfig& cfg, const TrainOptions& options) {
    cfg.validate();
    if (data.empty()) fail_input("training needs at least one example");
    for (const auto& ex : data)
        if (ex.gt.size() == 0) fail_input("example " + ex.name + " has no ground truth");

    TrainResult res;
    AdamWConfig adam = cfg.optimizer;
    std::vector<DepthMap> feedback;
    int start_epoch = 0;
    if (options.resume) {
        const WeightsFile ck = load_weights(*options.resume);
        res.state.config = adam;
        std::uint64_t next = 0;
        from_checkpoint(ck, res.weights, res.state, next);
        if (res.weights.config.levels != cfg.rnet.levels || res.weights.config.base_channels != cfg.rnet.base_channels)
            fail_input("checkpoint network layout differs from the config");
        // The stored scalars are float32; the config holds the exact values.
        res.weights.config = cfg.rnet;
        start_epoch = static_cast<int>(next);
        feedback = feedback_from_checkpoint(ck, data.size());
    } else {
        Rng init(mix_seed(cfg.seed, kInitStream));
        res.weights = init_weights(cfg.rnet, init);
        res.state = OptimState::for_weights(res.weights, adam);
    }

    std::ofstream log;
    if (!options.log_path.empty()) {
        log.open(options.log_path, options.resume ? std::ios::app : std::ios::trunc);
        if (!log) fail_io("cannot open log " + options.log_path.string());
    }

    const int total = cfg.schedule.total_epochs();
    const int end = options.stop_after_epochs >= 0 ? std::min(total, start_epoch + options.stop_after_epochs) : total;
    const Rng step_root(mix_seed(cfg.seed, kStepStream));
    int epoch = start_epoch;
    for (; epoch < end; ++epoch) {
        const int stage = stage_of_epoch(cfg.schedule, epoch);
        const int iters = cfg.schedule.stage_iterations[static_cast<std::size_t>(stage)];
        const double lr = cfg.schedule.stage_lr[static_cast<std::size_t>(stage)];
        res.state.config = adam;
        res.state.config.lr = lr;

        if (iters > 0) {
            const int since = epoch - stage_start(cfg.schedule, stage);
            if (since % cfg.schedule.feedback_refresh == 0 || feedback.size() != data.size())
                feedback = feedback_inputs(data, res.weights, cfg, epoch, iters);
        } else {
            feedback.clear();
        }

        const auto order = epoch_order(cfg.seed, epoch, data.size());
        EpochLog elog;
        elog.epoch = epoch;
        elog.stage = stage;
        elog.stage_iterations = iters;
        elog.lr = lr;
        std::size_t pos = 0;
        while (pos < order.size()) {
            const std::size_t bend = std::min(order.size(), pos + static_cast<std::size_t>(cfg.batch_size));
            RNetWeights grads = zero_weights<float>(cfg.rnet);
            for (std::size_t b = pos; b < bend; ++b) {
                const std::size_t j = order[b];
                const Example& ex = data[j];
                ObjectiveInput in;
                in.rgb = &ex.rgb;
                in.depth = feedback.empty() ? &ex.initial : &feedback[j];
                in.gt = &ex.gt;
                in.K = ex.K;
                in.masks = &ex.masks;
                Rng rng = step_root.derive(mix_seed(static_cast<std::uint64_t>(epoch), j));
                const LossBreakdown l = evaluate_objective(res.weights, in, cfg.sampler, cfg.losses, rng, &grads);
                elog.mean.lambda_mse += l.lambda_mse;
                elog.mean.pud += l.pud;
                elog.mean.sub += l.sub;
                elog.mean.seg += l.seg;
                elog.mean.sample += l.sample;
                elog.mean.total += l.total;
            }
            grads.scale(1.0f / static_cast<float>(bend - pos));
            adamw_step(res.weights, grads, res.state);
            ++elog.steps;
            pos = bend;
        }
        const double inv = 1.0 / static_cast<double>(data.size());
        for (double* v : {&elog.mean.lambda_mse, &elog.mean.pud, &elog.mean.sub, &elog.mean.seg, &elog.mean.sample,
                          &elog.mean.total})
            *v *= inv;
        if (log) log << log_json(elog).dump() << "\n" << std::flush;
        res.log.push_back(elog);
        if (options.on_epoch) options.on_epoch(elog);

        if (!options.checkpoint_path.empty() && cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0)
            write_atomically(make_checkpoint(res.weights, res.state, epoch + 1, feedback), options.checkpoint_path);
    }
    res.next_epoch = epoch;
    if (!options.checkpoint_path.empty())
        write_atomically(make_checkpoint(res.weights, res.state, epoch, feedback), options.checkpoint_path);
    if (!options.weights_out.empty()) save_weights(to_weights_file(res.weights), options.weights_out);
    return res;
}

} // namespace multidepth
