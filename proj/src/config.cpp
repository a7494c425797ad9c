#include "multidepth/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <toml.hpp>

namespace multidepth {

std::vector<int> Schedule::stage_lengths() const {
    std::vector<int> out;
    int prev = 0;
    for (int e : stage_epochs) {
        out.push_back(cumulative ? e - prev : e);
        prev = e;
    }
    return out;
}

int Schedule::total_epochs() const {
    int total = 0;
    for (int e : stage_lengths()) total += e;
    return total;
}

void Schedule::validate() const {
    if (stage_iterations.empty()) fail_input("schedule needs at least one stage");
    if (stage_epochs.size() != stage_iterations.size() || stage_lr.size() != stage_iterations.size())
        fail_input("schedule arrays stage_iterations, stage_epochs and stage_lr must have equal length");
    for (int n : stage_iterations)
        if (n < 0) fail_input("stage iteration counts must be >= 0");
    for (int e : stage_lengths())
        if (e < 0) fail_input(cumulative ? "cumulative stage epochs must be non-decreasing" : "stage epochs must be >= 0");
    for (double lr : stage_lr)
        if (!(lr > 0)) fail_input("stage learning rates must be positive");
    if (feedback_refresh < 1) fail_input("feedback_refresh must be >= 1");
}

void PipelineConfig::validate() const {
    if (preset != "desk" && preset != "paper") fail_input("preset must be 'desk' or 'paper'");
    if (iterations < 0) fail_input("iterations must be >= 0");
    if (threads < 1) fail_input("threads must be >= 1");
    sampler.validate();
    rnet.validate();
    mrcm.validate();
    losses.validate();
    if (!(optimizer.lr > 0 && optimizer.beta1 >= 0 && optimizer.beta1 < 1 && optimizer.beta2 >= 0 &&
          optimizer.beta2 < 1 && optimizer.weight_decay >= 0 && optimizer.epsilon > 0))
        fail_input("optimizer hyperparameters out of range");
    if (batch_size < 1) fail_input("batch_size must be >= 1");
    schedule.validate();
    if (checkpoint_every < 0) fail_input("checkpoint_every must be >= 0");
    if (width < 1 || height < 1) fail_input("working resolution must be positive");
    if (!(eval_tau > 0)) fail_input("eval tau must be positive");
    synth.validate();
    degrade.validate();
}

PipelineConfig preset_config(const std::string& name) {
    PipelineConfig c;
    if (name == "desk") {
        c.preset = "desk";
        c.rnet.base_channels = 8;
        c.batch_size = 4;
        c.optimizer.lr = 2e-3;
        c.schedule.stage_iterations = {0, 2, 5, 8};
        c.schedule.stage_epochs = {60, 30, 30, 20};
        c.schedule.stage_lr = {2e-3, 5e-4, 2.5e-4, 1.25e-4};
        c.schedule.feedback_refresh = 1;
        c.checkpoint_every = 10;
        c.width = c.height = 64;
        c.synth.width = c.synth.height = 64;
        c.synth.room_width = 3.0;
        c.synth.room_height = 2.4;
        c.synth.room_depth = 2.2;
        c.synth.camera = {1.5, 1.1, 0.3};
        c.synth.box_near = 0.5;
        c.synth.box_size_lo = 0.2;
        c.synth.box_size_hi = 0.6;
        c.degrade.noise_sigma = 0.10;
        c.degrade.blur_sigma = 1.0;
        return c;
    }
    if (name == "paper") {
        c.preset = "paper";
        c.rnet.base_channels = 16;
        c.batch_size = 16;
        c.optimizer.lr = 3.5e-4;
        c.schedule.stage_iterations = {0, 2, 5, 10, 30};
        c.schedule.stage_epochs = {2000, 1000, 1000, 1000, 1000};
        c.schedule.stage_lr = {3.5e-4, 1e-5, 1e-5, 1e-5, 1e-5};
        c.schedule.feedback_refresh = 1;
        c.checkpoint_every = 50;
        c.width = c.height = 512;
        c.synth.width = c.synth.height = 512;
        c.degrade.noise_sigma = 0.10;
        c.degrade.blur_sigma = 1.0;
        return c;
    }
    fail_input("unknown preset '" + name + "' (expected desk or paper)");
}

namespace {

struct Field {
    std::function<void(const toml::node&, PipelineConfig&, const std::string&)> read;
    std::function<void(const PipelineConfig&, toml::table&, const std::string&)> write;
};

[[noreturn]] void bad_type(const std::string& key, const char* expected) {
    fail_input("config key '" + key + "' must be " + expected);
}

double get_double(const toml::node& n, const std::string& key) {
    if (auto v = n.value<double>(); v && (n.is_floating_point() || n.is_integer())) return *v;
    bad_type(key, "a number");
}

std::int64_t get_int(const toml::node& n, const std::string& key) {
    if (n.is_integer()) return *n.value<std::int64_t>();
    bad_type(key, "an integer");
}

int get_small_int(const toml::node& n, const std::string& key) {
    const std::int64_t v = get_int(n, key);
    if (v < -(1LL << 30) || v > (1LL << 30)) fail_input("config key '" + key + "' is out of range");
    return static_cast<int>(v);
}

template <class T, class Get>
std::vector<T> get_array(const toml::node& n, const std::string& key, Get get, std::size_t expected = 0) {
    const auto* arr = n.as_array();
    if (!arr) bad_type(key, "an array");
    if (expected && arr->size() != expected) fail_input("config key '" + key + "' must have " + std::to_string(expected) + " elements");
    std::vector<T> out;
    for (const auto& e : *arr) out.push_back(static_cast<T>(get(e, key)));
    return out;
}

template <class Member>
Field number(Member member) {
    return {[member](const toml::node& n, PipelineConfig& c, const std::string& k) {
                auto& ref = member(c);
                using V = std::remove_reference_t<decltype(ref)>;
                if constexpr (std::is_same_v<V, double>) ref = get_double(n, k);
                else if constexpr (std::is_same_v<V, bool>) {
                    if (!n.is_boolean()) bad_type(k, "a boolean");
                    ref = *n.value<bool>();
                } else if constexpr (std::is_same_v<V, std::uint64_t>) ref = static_cast<std::uint64_t>(get_int(n, k));
                else ref = get_small_int(n, k);
            },
            [member](const PipelineConfig& c, toml::table& t, const std::string& k) {
                const auto& ref = member(const_cast<PipelineConfig&>(c));
                using V = std::remove_cvref_t<decltype(ref)>;
                if constexpr (std::is_same_v<V, double>) t.insert_or_assign(k, ref);
                else if constexpr (std::is_same_v<V, bool>) t.insert_or_assign(k, ref);
                else if constexpr (std::is_same_v<V, std::uint64_t>) t.insert_or_assign(k, static_cast<std::int64_t>(ref));
                else t.insert_or_assign(k, static_cast<std::int64_t>(ref));
            }};
}

template <class Member>
Field double_array(Member member) {
    return {[member](const toml::node& n, PipelineConfig& c, const std::string& k) {
                auto& ref = member(c);
                const auto v = get_array<double>(n, k, get_double, ref.size());
                std::copy(v.begin(), v.end(), ref.begin());
            },
            [member](const PipelineConfig& c, toml::table& t, const std::string& k) {
                toml::array a;
                for (double v : member(const_cast<PipelineConfig&>(c))) a.push_back(v);
                t.insert_or_assign(k, std::move(a));
            }};
}

Field point(std::function<Point3&(PipelineConfig&)> member) {
    return {[member](const toml::node& n, PipelineConfig& c, const std::string& k) {
                const auto v = get_array<double>(n, k, get_double, 3);
                member(c) = {v[0], v[1], v[2]};
            },
            [member](const PipelineConfig& c, toml::table& t, const std::string& k) {
                const Point3& p = member(const_cast<PipelineConfig&>(c));
                t.insert_or_assign(k, toml::array{p.x, p.y, p.z});
            }};
}

Field triple(std::function<double&(PipelineConfig&)> a, std::function<double&(PipelineConfig&)> b,
             std::function<double&(PipelineConfig&)> d) {
    return {[a, b, d](const toml::node& n, PipelineConfig& c, const std::string& k) {
                const auto v = get_array<double>(n, k, get_double, 3);
                a(c) = v[0];
                b(c) = v[1];
                d(c) = v[2];
            },
            [a, b, d](const PipelineConfig& c, toml::table& t, const std::string& k) {
                auto& cc = const_cast<PipelineConfig&>(c);
                t.insert_or_assign(k, toml::array{a(cc), b(cc), d(cc)});
            }};
}

Field pair_field(std::function<double&(PipelineConfig&)> lo, std::function<double&(PipelineConfig&)> hi) {
    return {[lo, hi](const toml::node& n, PipelineConfig& c, const std::string& k) {
                const auto v = get_array<double>(n, k, get_double, 2);
                lo(c) = v[0];
                hi(c) = v[1];
            },
            [lo, hi](const PipelineConfig& c, toml::table& t, const std::string& k) {
                auto& cc = const_cast<PipelineConfig&>(c);
                t.insert_or_assign(k, toml::array{lo(cc), hi(cc)});
            }};
}

Field int_pair(std::function<int&(PipelineConfig&)> lo, std::function<int&(PipelineConfig&)> hi) {
    return {[lo, hi](const toml::node& n, PipelineConfig& c, const std::string& k) {
                const auto v = get_array<int>(n, k, get_small_int, 2);
                lo(c) = v[0];
                hi(c) = v[1];
            },
            [lo, hi](const PipelineConfig& c, toml::table& t, const std::string& k) {
                auto& cc = const_cast<PipelineConfig&>(c);
                t.insert_or_assign(k, toml::array{static_cast<std::int64_t>(lo(cc)), static_cast<std::int64_t>(hi(cc))});
            }};
}

template <class T>
Field vector_field(std::function<std::vector<T>&(PipelineConfig&)> member) {
    return {[member](const toml::node& n, PipelineConfig& c, const std::string& k) {
                if constexpr (std::is_same_v<T, double>) member(c) = get_array<double>(n, k, get_double);
                else member(c) = get_array<int>(n, k, get_small_int);
            },
            [member](const PipelineConfig& c, toml::table& t, const std::string& k) {
                toml::array a;
                for (T v : member(const_cast<PipelineConfig&>(c))) {
                    if constexpr (std::is_same_v<T, double>) a.push_back(v);
                    else a.push_back(static_cast<std::int64_t>(v));
                }
                t.insert_or_assign(k, std::move(a));
            }};
}

template <class E>
Field enum_field(std::function<E&(PipelineConfig&)> member, std::vector<std::pair<E, std::string>> names) {
    return {[member, names](const toml::node& n, PipelineConfig& c, const std::string& k) {
                const auto s = n.value<std::string>();
                if (!n.is_string() || !s) bad_type(k, "a string");
                for (const auto& [e, name] : names)
                    if (name == *s) {
                        member(c) = e;
                        return;
                    }
                fail_input("config key '" + k + "' has unknown value '" + *s + "'");
            },
            [member, names](const PipelineConfig& c, toml::table& t, const std::string& k) {
                const E e = member(const_cast<PipelineConfig&>(c));
                for (const auto& [v, name] : names)
                    if (v == e) t.insert_or_assign(k, name);
            }};
}

#define MD_REF(expr) [](PipelineConfig& c) -> auto& { return c.expr; }

using Registry = std::map<std::string, std::map<std::string, Field>>;

const Registry& registry() {
    static const Registry reg = [] {
        Registry r;
        auto& top = r[""];
        top["seed"] = number(MD_REF(seed));
        top["deterministic"] = number(MD_REF(deterministic));
        top["iterations"] = number(MD_REF(iterations));
        top["threads"] = number(MD_REF(threads));

        auto& s = r["sampler"];
        s["s_pud"] = number(MD_REF(sampler.s_pud));
        s["n_r"] = number(MD_REF(sampler.n_r));
        s["crop_scale"] = pair_field(MD_REF(sampler.crop_scale_lo), MD_REF(sampler.crop_scale_hi));
        s["jitter_brightness"] = number(MD_REF(sampler.jitter_brightness));
        s["jitter_contrast"] = number(MD_REF(sampler.jitter_contrast));
        s["n_s"] = number(MD_REF(sampler.n_s));

        auto& n = r["rnet"];
        n["levels"] = number(MD_REF(rnet.levels));
        n["base_channels"] = number(MD_REF(rnet.base_channels));
        n["depth_noise_sigma"] = number(MD_REF(rnet.depth_noise_sigma));
        n["residual_clamp"] = number(MD_REF(rnet.residual_clamp));

        auto& m = r["mrcm"];
        m["k"] = number(MD_REF(mrcm.k));
        m["min_support"] = number(MD_REF(mrcm.min_support));

        auto& l = r["losses"];
        l["lambda"] = double_array(MD_REF(losses.lambda));
        l["lambda_sample"] = double_array(MD_REF(losses.lambda_sample));
        l["w_sample"] = number(MD_REF(losses.w_sample));
        l["huber_delta"] = number(MD_REF(losses.huber_delta));
        l["z_mode"] = enum_field<ZMode>(MD_REF(losses.z_mode), {{ZMode::Log, "log"}, {ZMode::Linear, "linear"}});

        auto& o = r["optimizer"];
        o["lr"] = number(MD_REF(optimizer.lr));
        o["beta1"] = number(MD_REF(optimizer.beta1));
        o["beta2"] = number(MD_REF(optimizer.beta2));
        o["weight_decay"] = number(MD_REF(optimizer.weight_decay));
        o["epsilon"] = number(MD_REF(optimizer.epsilon));
        o["batch_size"] = number(MD_REF(batch_size));

        auto& sc = r["schedule"];
        sc["stage_iterations"] = vector_field<int>(MD_REF(schedule.stage_iterations));
        sc["stage_epochs"] = vector_field<int>(MD_REF(schedule.stage_epochs));
        sc["stage_lr"] = vector_field<double>(MD_REF(schedule.stage_lr));
        sc["cumulative"] = number(MD_REF(schedule.cumulative));
        sc["feedback_refresh"] = number(MD_REF(schedule.feedback_refresh));

        r["train"]["checkpoint_every"] = number(MD_REF(checkpoint_every));
        r["eval"]["tau"] = number(MD_REF(eval_tau));

        auto& io = r["io"];
        io["width"] = number(MD_REF(width));
        io["height"] = number(MD_REF(height));
        io["resize_policy"] = enum_field<ResizePolicy>(
            MD_REF(resize_policy), {{ResizePolicy::CenterCrop, "center_crop"}, {ResizePolicy::Letterbox, "letterbox"}});

        auto& sy = r["synth"];
        sy["width"] = number(MD_REF(synth.width));
        sy["height"] = number(MD_REF(synth.height));
        sy["room"] = triple(MD_REF(synth.room_width), MD_REF(synth.room_height), MD_REF(synth.room_depth));
        sy["box_count"] = int_pair(MD_REF(synth.box_min), MD_REF(synth.box_max));
        sy["box_size"] = pair_field(MD_REF(synth.box_size_lo), MD_REF(synth.box_size_hi));
        sy["box_near"] = number(MD_REF(synth.box_near));
        sy["camera"] = point(MD_REF(synth.camera));
        sy["yaw"] = number(MD_REF(synth.yaw));
        sy["pitch"] = number(MD_REF(synth.pitch));
        sy["camera_jitter"] = number(MD_REF(synth.camera_jitter));
        sy["yaw_jitter"] = number(MD_REF(synth.yaw_jitter));
        sy["pitch_jitter"] = number(MD_REF(synth.pitch_jitter));
        sy["focal"] = number(MD_REF(synth.focal));
        sy["light"] = point(MD_REF(synth.light));
        sy["ambient"] = number(MD_REF(synth.ambient));
        sy["seed"] = number(MD_REF(synth.seed));

        auto& d = r["degrade"];
        d["noise_sigma"] = number(MD_REF(degrade.noise_sigma));
        d["blur_sigma"] = number(MD_REF(degrade.blur_sigma));
        d["bias_amplitude"] = number(MD_REF(degrade.bias_amplitude));
        d["bias_period"] = number(MD_REF(degrade.bias_period));
        d["seed"] = number(MD_REF(degrade.seed));
        return r;
    }();
    return reg;
}

#undef MD_REF

} // namespace

PipelineConfig parse_config(const std::string& toml_text, const std::string& base_preset) {
    toml::table doc;
    try {
        doc = toml::parse(toml_text);
    } catch (const toml::parse_error& e) {
        std::ostringstream msg;
        msg << "config does not parse: " << e.description() << " (line " << e.source().begin.line << ")";
        fail_input(msg.str());
    }
    std::string preset = base_preset;
    if (const auto* p = doc.get("preset")) {
        const auto s = p->value<std::string>();
        if (!p->is_string() || !s) bad_type("preset", "a string");
        preset = *s;
    }
    PipelineConfig c = preset_config(preset);
    const Registry& reg = registry();
    for (const auto& [key, node] : doc) {
        const std::string k(key.str());
        if (k == "preset") continue;
        if (const auto* sub = node.as_table()) {
            const auto section = reg.find(k);
            if (k.empty() || section == reg.end()) fail_input("unknown config section [" + k + "]");
            for (const auto& [skey, snode] : *sub) {
                const std::string sk(skey.str());
                const auto f = section->second.find(sk);
                if (f == section->second.end()) fail_input("unknown config key '" + k + "." + sk + "'");
                f->second.read(snode, c, k + "." + sk);
            }
            continue;
        }
        const auto& topf = reg.at("");
        const auto f = topf.find(k);
        if (f == topf.end()) fail_input("unknown config key '" + k + "'");
        f->second.read(node, c, k);
    }
    c.validate();
    return c;
}

PipelineConfig load_config(const std::filesystem::path& path, const std::string& base_preset) {
    std::ifstream in(path);
    if (!in) fail_io("cannot open config " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), base_preset);
}

std::string serialize_config(const PipelineConfig& config) {
    toml::table doc;
    doc.insert_or_assign("preset", config.preset);
    for (const auto& [section, fields] : registry()) {
        if (section.empty()) {
            for (const auto& [k, f] : fields) f.write(config, doc, k);
            continue;
        }
        toml::table t;
        for (const auto& [k, f] : fields) f.write(config, t, k);
        doc.insert_or_assign(section, std::move(t));
    }
    std::ostringstream out;
    out << toml::toml_formatter(doc) << "\n";
    return out.str();
}

} // namespace multidepth
