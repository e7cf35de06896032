#include "hypercast/cli.hpp"

#include <CLI11.hpp>
#include <Eigen/Core>
#include <cstdio>
#include <fstream>
#include <future>
#include <iostream>
#include <numeric>
#include <sstream>

#include "hypercast/data.hpp"
#include "hypercast/hypergraph.hpp"
#include "hypercast/introspect.hpp"
#include "hypercast/kernels.hpp"
#include "hypercast/param_io.hpp"

namespace hypercast::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using ojson = nlohmann::ordered_json;

// ---- config ---------------------------------------------------------------------

fs::path RunConfig::panel_stem() const { return panel.empty() ? output_dir / "panel" : panel; }
fs::path RunConfig::checkpoint_stem() const { return checkpoint.empty() ? output_dir / "model" : checkpoint; }

void apply_override(json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("override '" + assignment + "' is not of the form key=value");
    const std::string path = assignment.substr(0, eq), text = assignment.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;

    json* node = &j;
    std::size_t start = 0;
    while (true) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (key.empty()) throw UsageError("override '" + assignment + "' has an empty key");
        if (!node->is_object()) throw UsageError("override '" + assignment + "' descends into a non-object");
        if (dot == std::string::npos) {
            (*node)[key] = value;
            return;
        }
        node = &(*node)[key];
        if (node->is_null()) *node = json::object();
        start = dot + 1;
    }
}

namespace {

template <class T>
T get(const json& j, const char* key, T fallback) {
    return j.contains(key) ? j.at(key).get<T>() : fallback;
}

std::vector<std::size_t> axis(const json& g, const char* key) {
    if (!g.contains(key)) return {};
    const auto v = g.at(key).get<std::vector<std::size_t>>();
    if (v.empty()) throw UsageError(std::string("grid axis '") + key + "' is empty");
    return v;
}

void check_keys(const json& j, const char* where, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw UsageError(std::string(where) + " must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || it.key() == a;
        if (!ok) throw UsageError(std::string("unknown key '") + it.key() + "' in " + where);
    }
}

}  // namespace

RunConfig run_config_from_json(const json& input) {
    const json& j = input.is_object() && input.value("format", "") == "hypercast-manifest" ? input.at("config") : input;
    check_keys(j, "run config",
               {"seed", "output_dir", "checkpoint", "data", "synth", "model", "train", "inspect", "grid"});
    RunConfig c;
    try {
        c.seed = get<std::uint64_t>(j, "seed", 0);
        c.output_dir = get<std::string>(j, "output_dir", "out");
        c.checkpoint = get<std::string>(j, "checkpoint", "");
        if (j.contains("data")) {
            const auto& d = j.at("data");
            check_keys(d, "data", {"sessions", "stations", "panel", "split_ratio", "impute_empty_days"});
            c.sessions = get<std::string>(d, "sessions", "");
            c.stations = get<std::string>(d, "stations", "");
            c.panel = get<std::string>(d, "panel", "");
            c.split_ratio = get<double>(d, "split_ratio", 0.8);
            c.impute_empty_days = get<bool>(d, "impute_empty_days", true);
        }
        if (j.contains("synth")) {
            const auto& s = j.at("synth");
            check_keys(s, "synth", {"num_stations", "num_days", "noise_sigma"});
            c.synth.num_stations = get<std::size_t>(s, "num_stations", c.synth.num_stations);
            c.synth.num_days = get<std::size_t>(s, "num_days", c.synth.num_days);
            c.synth.noise_sigma = get<double>(s, "noise_sigma", c.synth.noise_sigma);
        }
        if (j.contains("inspect")) {
            check_keys(j.at("inspect"), "inspect", {"max_samples"});
            c.inspect_max_samples = get<std::size_t>(j.at("inspect"), "max_samples", 32);
        }
        if (j.contains("grid")) {
            const auto& g = j.at("grid");
            check_keys(g, "grid", {"T_r", "T_w", "T_f", "K"});
            c.grid = GridConfig{axis(g, "T_r"), axis(g, "T_w"), axis(g, "T_f"), axis(g, "K")};
        }
    } catch (const json::exception& e) {
        throw UsageError(std::string("run config: ") + e.what());
    }

    // The top-level seed feeds initialization and shuffling unless those are
    // pinned explicitly.
    json m = j.value("model", json::object());
    json t = j.value("train", json::object());
    if (!m.is_object() || !t.is_object()) throw UsageError("model and train must be JSON objects");
    c.explicit_model = m;
    if (!m.contains("init_seed")) m["init_seed"] = c.seed;
    if (!t.contains("seed")) t["seed"] = c.seed;
    c.model = model::model_config_from_json(m);
    c.train = train::train_config_from_json(t);

    if (!(c.split_ratio > 0.0 && c.split_ratio < 1.0)) throw UsageError("data.split_ratio must lie in (0, 1)");
    if (c.inspect_max_samples < 1) throw UsageError("inspect.max_samples must be positive");
    if (c.synth.num_stations < 2 || c.synth.num_days < 60 || !(c.synth.noise_sigma >= 0.0))
        throw UsageError("synth needs num_stations >= 2, num_days >= 60 and noise_sigma >= 0");
    c.train.validate();
    // Station-dependent checks wait for the panel; validate the rest now.
    model::ModelConfig probe = c.model;
    probe.num_stations = std::max(probe.num_stations, probe.K + 1);
    probe.validate();
    return c;
}

ojson to_json(const RunConfig& c) {
    ojson j;
    j["seed"] = c.seed;
    j["output_dir"] = c.output_dir.string();
    j["checkpoint"] = c.checkpoint.string();
    j["data"] = {{"sessions", c.sessions.string()},
                 {"stations", c.stations.string()},
                 {"panel", c.panel.string()},
                 {"split_ratio", c.split_ratio},
                 {"impute_empty_days", c.impute_empty_days}};
    j["synth"] = {{"num_stations", c.synth.num_stations},
                  {"num_days", c.synth.num_days},
                  {"noise_sigma", c.synth.noise_sigma}};
    j["inspect"] = {{"max_samples", c.inspect_max_samples}};
    j["model"] = model::to_json(c.model);
    if (!c.explicit_model.contains("num_stations")) j["model"].erase("num_stations");  // taken from the panel
    j["train"] = train::to_json(c.train);
    if (c.grid) {
        ojson g = ojson::object();
        if (!c.grid->T_r.empty()) g["T_r"] = c.grid->T_r;
        if (!c.grid->T_w.empty()) g["T_w"] = c.grid->T_w;
        if (!c.grid->T_f.empty()) g["T_f"] = c.grid->T_f;
        if (!c.grid->K.empty()) g["K"] = c.grid->K;
        j["grid"] = g;
    }
    return j;
}

std::string config_hash(const RunConfig& c) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char ch : to_json(c).dump()) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ---- pipeline pieces ------------------------------------------------------------------

namespace {

struct Artifacts {
    std::vector<fs::path> inputs, outputs;
};

fs::path with_ext(const fs::path& stem, const char* ext) { return fs::path(stem.string() + ext); }

void require_file(const fs::path& p, const char* what) {
    if (p.empty()) throw UsageError(std::string(what) + " path is not set");
    if (!fs::exists(p)) throw data::DataError(std::string(what) + " not found: " + p.string());
}

// Refuses to write over any input of the same run.
void guard_outputs(const Artifacts& a) {
    for (const auto& o : a.outputs)
        for (const auto& i : a.inputs)
            if (fs::exists(o) && fs::exists(i) && fs::equivalent(o, i))
                throw UsageError("output " + o.string() + " would overwrite input " + i.string());
}

data::DemandPanel load_panel(const RunConfig& c, Artifacts& a) {
    const auto stem = c.panel_stem();
    const auto csv = with_ext(stem, ".csv"), js = with_ext(stem, ".json");
    require_file(csv, "panel CSV");
    require_file(js, "panel JSON");
    a.inputs.push_back(csv);
    a.inputs.push_back(js);
    return data::read_panel(csv, js);
}

data::WindowSpec window_spec(const model::ModelConfig& m) { return {m.T_r, m.T_w, m.T_f}; }

struct Split {
    std::vector<data::WindowSample> train, test;
};

Split split_windows(const data::DemandPanel& panel, const model::ModelConfig& m, double ratio) {
    auto [tr, te] = data::chronological_split(data::build_windows(panel, window_spec(m)), ratio);
    if (tr.empty() || te.empty()) throw data::DataError("panel too short for a train/test split");
    return {std::move(tr), std::move(te)};
}

// Normalization statistics from the days visible to training inputs.
model::NormStats train_norm(const data::DemandPanel& panel, const std::vector<data::WindowSample>& train) {
    const auto last = static_cast<Eigen::Index>(train.back().anchor_day);
    return model::NormStats::from_demand(panel.demand.leftCols(last + 1));
}

hg::FcmOptions fcm_options(const model::ModelConfig& m) {
    hg::FcmOptions o;
    o.seed = m.init_seed;
    return o;
}

Eigen::MatrixXd distance_incidence(const data::DemandPanel& panel, const model::ModelConfig& m) {
    return hg::fcm_soft_clusters(data::station_coords(panel), m.K, fcm_options(m)).values;
}

model::ModelConfig bind_stations(model::ModelConfig m, const RunConfig& c, const data::DemandPanel& panel) {
    if (c.explicit_model.contains("num_stations") && m.num_stations != panel.num_stations())
        throw data::DataError("model.num_stations=" + std::to_string(m.num_stations) + " but the panel has " +
                              std::to_string(panel.num_stations()) + " stations");
    m.num_stations = panel.num_stations();
    m.validate();
    return m;
}

// Explicitly configured model fields must agree with the checkpoint.
void check_against_checkpoint(const RunConfig& c, const model::Model& m) {
    const json saved = model::to_json(m.config());
    for (auto it = c.explicit_model.begin(); it != c.explicit_model.end(); ++it) {
        if (it.key() == "init_seed") continue;
        const json mine = model::to_json(c.model).at(it.key());
        if (saved.at(it.key()) != mine)
            throw model::ConfigError("config mismatch: field '" + it.key() + "' is " + mine.dump() +
                                     " in the run config but " + saved.at(it.key()).dump() + " in the checkpoint");
    }
}

model::Model load_model(const RunConfig& c, const data::DemandPanel& panel, Artifacts& a) {
    const auto stem = c.checkpoint_stem();
    require_file(with_ext(stem, ".json"), "checkpoint");
    a.inputs.push_back(with_ext(stem, ".json"));
    a.inputs.push_back(with_ext(stem, ".params"));
    model::Model m = model::load_checkpoint(stem);
    check_against_checkpoint(c, m);
    if (m.config().num_stations != panel.num_stations())
        throw data::DataError("checkpoint expects " + std::to_string(m.config().num_stations) +
                              " stations but the panel has " + std::to_string(panel.num_stations()));
    return m;
}

void write_json(const fs::path& p, const ojson& j, Artifacts& a) {
    std::ofstream f(p, std::ios::trunc);
    if (!f) throw data::DataError("cannot write " + p.string());
    f << j.dump(2) << '\n';
    a.outputs.push_back(p);
}

std::string compiler_id() {
#if defined(__clang__)
    return "clang " __clang_version__;
#elif defined(__GNUC__)
    return "gcc " __VERSION__;
#else
    return "unknown";
#endif
}

void write_manifest(const std::string& cmd, const RunConfig& c, const fs::path& dir, Artifacts& a, ojson extra = {}) {
    ojson j;
    j["format"] = "hypercast-manifest";
    j["subcommand"] = cmd;
    j["config_hash"] = config_hash(c);
    j["seed"] = c.seed;
    j["versions"] = {{"hypercast", kVersion},
                     {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                   std::to_string(EIGEN_MINOR_VERSION)},
                     {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                           std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                           std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
                     {"compiler", compiler_id()},
                     {"cxx_standard", __cplusplus},
                     {"kernels", std::string(kernels::isa_name(kernels::active().isa))}};
    j["config"] = to_json(c);
    ojson ins = ojson::array(), outs = ojson::array();
    for (const auto& p : a.inputs) ins.push_back(p.string());
    for (const auto& p : a.outputs) outs.push_back(p.string());
    j["inputs"] = ins;
    j["outputs"] = outs;
    if (!extra.is_null()) j["result"] = extra;
    std::ofstream f(dir / (cmd + ".manifest.json"), std::ios::trunc);
    if (!f) throw data::DataError("cannot write manifest in " + dir.string());
    f << j.dump(2) << '\n';
}

// ---- subcommands -------------------------------------------------------------------

ojson cmd_synth(const RunConfig& c, Artifacts& a) {
    const auto panel = data::synthetic_panel(c.seed, c.synth.num_stations, c.synth.num_days, c.synth.noise_sigma);
    const auto stem = c.panel_stem();
    fs::create_directories(stem.parent_path().empty() ? fs::path(".") : stem.parent_path());
    a.outputs = {with_ext(stem, ".csv"), with_ext(stem, ".json")};
    guard_outputs(a);
    data::write_panel(panel, a.outputs[0], a.outputs[1]);
    return {{"stations", panel.num_stations()}, {"days", panel.num_days()}};
}

ojson cmd_prepare(const RunConfig& c, Artifacts& a) {
    require_file(c.sessions, "sessions CSV");
    require_file(c.stations, "stations CSV");
    a.inputs = {c.sessions, c.stations};
    const auto sessions = data::read_sessions_csv(c.sessions);
    const auto coords = data::read_stations_csv(c.stations);
    auto ingested = data::ingest_sessions(sessions, coords);
    data::DemandPanel panel = std::move(ingested.panel);
    std::size_t imputed_days = 0;
    if (c.impute_empty_days) {
        // Days without a single session anywhere are treated as unrecorded.
        data::MissingMask mask = data::MissingMask::Constant(panel.demand.rows(), panel.demand.cols(), false);
        for (Eigen::Index t = 0; t < panel.demand.cols(); ++t)
            if ((panel.demand.col(t).array() == 0.0).all()) {
                mask.col(t).setConstant(true);
                ++imputed_days;
            }
        panel = data::impute_missing(panel, mask);
    }
    const auto stem = c.panel_stem();
    fs::create_directories(stem.parent_path().empty() ? fs::path(".") : stem.parent_path());
    a.outputs = {with_ext(stem, ".csv"), with_ext(stem, ".json")};
    guard_outputs(a);
    data::write_panel(panel, a.outputs[0], a.outputs[1]);
    return {{"stations", panel.num_stations()},
            {"days", panel.num_days()},
            {"sessions", sessions.size()},
            {"rejected_sessions", ingested.rejected.size()},
            {"imputed_days", imputed_days}};
}

ojson cmd_hypergraph(const RunConfig& c, Artifacts& a) {
    const auto panel = load_panel(c, a);
    const auto mc = bind_stations(c.model, c, panel);
    const auto windows = data::build_windows(panel, window_spec(mc));
    if (windows.empty()) throw data::DataError("panel too short for one window");
    const auto& last = windows.back();
    const fs::path dir = c.output_dir / "hypergraph";
    fs::create_directories(dir);
    std::vector<std::string> ids;
    for (const auto& s : panel.stations) ids.push_back(s.id);

    const auto opts = fcm_options(mc);
    const auto h_dist = hg::fcm_soft_clusters(data::station_coords(panel), mc.K, opts);
    const ojson dist_params = {{"method", "fuzzy_c_means"}, {"fuzzifier", opts.fuzzifier}, {"tol", opts.tol},
                               {"max_iter", opts.max_iter}, {"seed", opts.seed}};
    const std::string anchor = data::format_date(panel.dates[last.anchor_day]);
    const auto h_rec = hg::demand_hypergraph(data::demand_channel(last.recent), mc.K, hg::Timescale::recent);
    const auto h_wek = hg::demand_hypergraph(data::demand_channel(last.weekly), mc.K, hg::Timescale::weekly);
    const ojson rec_params = {{"method", "spectral"}, {"anchor_date", anchor}, {"window_days", mc.T_r}};
    const ojson wek_params = {{"method", "spectral"}, {"anchor_date", anchor}, {"window_weeks", mc.T_w}};

    for (const char* name : {"dist", "rec_demd", "wek_demd"}) {
        a.outputs.push_back(dir / (std::string(name) + ".csv"));
        a.outputs.push_back(dir / (std::string(name) + ".json"));
    }
    guard_outputs(a);
    hg::write_incidence(h_dist, ids, a.outputs[0], a.outputs[1], dist_params.dump());
    hg::write_incidence(h_rec, ids, a.outputs[2], a.outputs[3], rec_params.dump());
    hg::write_incidence(h_wek, ids, a.outputs[4], a.outputs[5], wek_params.dump());
    return {{"K", mc.K}, {"anchor_date", anchor}};
}

struct TrainResult {
    train::TrainLog log;
    train::Metrics test, persistence;
};

TrainResult train_and_save(const RunConfig& c, const model::ModelConfig& mc, const data::DemandPanel& panel,
                           const fs::path& dir, const fs::path& ckpt, Artifacts& a, std::ostream* progress,
                           long log_every) {
    const auto split = split_windows(panel, mc, c.split_ratio);
    model::Model m(mc, train_norm(panel, split.train));
    const Eigen::MatrixXd h_dist = distance_incidence(panel, mc);
    train::TrainHooks hooks;
    if (progress && log_every > 0)
        hooks.on_epoch = [&](const train::EpochRecord& r, bool) {
            if (r.epoch % log_every == 0) *progress << "epoch " << r.epoch << " loss " << r.loss << " lr " << r.lr << '\n';
        };
    TrainResult res;
    res.log = train::train(m, split.train, h_dist, c.train, hooks, false);

    fs::create_directories(dir);
    if (!ckpt.parent_path().empty()) fs::create_directories(ckpt.parent_path());
    model::save_checkpoint(m, ckpt);
    a.outputs.push_back(with_ext(ckpt, ".params"));
    a.outputs.push_back(with_ext(ckpt, ".json"));
    train::write_train_log_csv(res.log, dir / "train_log.csv");
    a.outputs.push_back(dir / "train_log.csv");

    res.test = train::evaluate(m, split.test, h_dist, c.train.batch_size);
    std::vector<Eigen::MatrixXd> targets;
    for (const auto& s : split.test) targets.push_back(s.target);
    res.persistence = train::compute_metrics(train::persistence_forecast(split.test), targets);
    return res;
}

ojson train_summary(const TrainResult& r) {
    return {{"epochs", r.log.epochs.size()},
            {"stop_reason", train::stop_reason_name(r.log.stop)},
            {"best_epoch", r.log.best_epoch},
            {"best_loss", r.log.best_loss},
            {"test", train::to_json(r.test)},
            {"persistence", train::to_json(r.persistence)}};
}

ojson cmd_train(const RunConfig& c, Artifacts& a, std::ostream& progress, long log_every) {
    const auto panel = load_panel(c, a);
    const auto mc = bind_stations(c.model, c, panel);
    const auto res = train_and_save(c, mc, panel, c.output_dir, c.checkpoint_stem(), a, &progress, log_every);
    return train_summary(res);
}

struct Cell {
    std::size_t T_r, T_w, T_f, K;
    std::string name() const {
        return "Tr" + std::to_string(T_r) + "_Tw" + std::to_string(T_w) + "_Tf" + std::to_string(T_f) + "_K" +
               std::to_string(K);
    }
};

ojson cmd_grid(const RunConfig& c, Artifacts& a, std::size_t jobs) {
    const auto panel = load_panel(c, a);
    const auto& g = *c.grid;
    auto or_base = [](const std::vector<std::size_t>& v, std::size_t base) {
        return v.empty() ? std::vector<std::size_t>{base} : v;
    };
    std::vector<Cell> cells;
    for (auto tr : or_base(g.T_r, c.model.T_r))
        for (auto tw : or_base(g.T_w, c.model.T_w))
            for (auto tf : or_base(g.T_f, c.model.T_f))
                for (auto k : or_base(g.K, c.model.K)) cells.push_back({tr, tw, tf, k});

    // Validate every cell before training any of them.
    std::vector<model::ModelConfig> configs;
    for (const auto& cell : cells) {
        model::ModelConfig mc = c.model;
        mc.T_r = cell.T_r;
        mc.T_w = cell.T_w;
        mc.T_f = cell.T_f;
        mc.K = cell.K;
        configs.push_back(bind_stations(mc, c, panel));
    }
    const fs::path root = c.output_dir / "grid";
    std::vector<TrainResult> results(cells.size());
    std::vector<Artifacts> cell_artifacts(cells.size());
    auto run_cell = [&](std::size_t i) {
        const fs::path dir = root / cells[i].name();
        results[i] = train_and_save(c, configs[i], panel, dir, dir / "model", cell_artifacts[i], nullptr, 0);
    };
    if (jobs <= 1) {
        for (std::size_t i = 0; i < cells.size(); ++i) run_cell(i);
    } else {
        // Each worker owns its cells' models; results land in fixed slots.
        std::vector<std::future<void>> workers;
        for (std::size_t w = 0; w < jobs; ++w)
            workers.push_back(std::async(std::launch::async, [&, w] {
                for (std::size_t i = w; i < cells.size(); i += jobs) run_cell(i);
            }));
        for (auto& f : workers) f.get();
    }
    for (const auto& ca : cell_artifacts) a.outputs.insert(a.outputs.end(), ca.outputs.begin(), ca.outputs.end());

    std::ofstream f(root / "summary.csv", std::ios::trunc);
    if (!f) throw data::DataError("cannot write grid summary");
    f.precision(17);
    f << "T_r,T_w,T_f,K,epochs,best_loss,test_MSE,test_MAE,test_R2,persistence_R2\n";
    ojson rows = ojson::array();
    for (std::size_t i = 0; i < cells.size(); ++i) {
        const auto& r = results[i];
        auto r2 = [](const train::Metrics& m) {
            std::ostringstream s;
            s.precision(17);
            if (m.r2) s << *m.r2;
            else s << "NA";
            return s.str();
        };
        f << cells[i].T_r << ',' << cells[i].T_w << ',' << cells[i].T_f << ',' << cells[i].K << ','
          << r.log.epochs.size() << ',' << r.log.best_loss << ',' << r.test.mse << ',' << r.test.mae << ','
          << r2(r.test) << ',' << r2(r.persistence) << '\n';
        rows.push_back({{"cell", cells[i].name()}, {"result", train_summary(r)}});
    }
    a.outputs.push_back(root / "summary.csv");
    return {{"cells", rows}};
}

std::vector<data::WindowSample> eval_windows(const data::DemandPanel& panel, const model::Model& m, double ratio) {
    return split_windows(panel, m.config(), ratio).test;
}

ojson cmd_forecast(const RunConfig& c, Artifacts& a) {
    const auto panel = load_panel(c, a);
    const auto m = load_model(c, panel, a);
    const auto samples = data::build_windows(panel, window_spec(m.config()));
    if (samples.empty()) throw data::DataError("panel too short for one window");
    const auto preds = train::predict(m, samples, distance_incidence(panel, m.config()), c.train.batch_size);

    fs::create_directories(c.output_dir);
    const fs::path out = c.output_dir / "forecast.csv";
    a.outputs.push_back(out);
    guard_outputs(a);
    std::ofstream f(out, std::ios::trunc);
    if (!f) throw data::DataError("cannot write " + out.string());
    f.precision(17);
    f << "anchor_date,station";
    for (std::size_t h = 1; h <= m.config().T_f; ++h) f << ",h" << h;
    f << '\n';
    for (std::size_t i = 0; i < samples.size(); ++i)
        for (std::size_t p = 0; p < panel.num_stations(); ++p) {
            f << data::format_date(panel.dates[samples[i].anchor_day]) << ',' << panel.stations[p].id;
            for (Eigen::Index h = 0; h < preds[i].cols(); ++h) f << ',' << preds[i](static_cast<Eigen::Index>(p), h);
            f << '\n';
        }
    return {{"anchors", samples.size()}};
}

ojson cmd_evaluate(const RunConfig& c, Artifacts& a) {
    const auto panel = load_panel(c, a);
    const auto m = load_model(c, panel, a);
    const auto test = eval_windows(panel, m, c.split_ratio);
    const auto metrics = train::evaluate(m, test, distance_incidence(panel, m.config()), c.train.batch_size);
    std::vector<Eigen::MatrixXd> targets;
    for (const auto& s : test) targets.push_back(s.target);
    const auto persistence = train::compute_metrics(train::persistence_forecast(test), targets);

    ojson j = train::to_json(metrics);
    j["split"] = "test";
    j["first_anchor"] = data::format_date(panel.dates[test.front().anchor_day]);
    j["last_anchor"] = data::format_date(panel.dates[test.back().anchor_day]);
    j["persistence"] = train::to_json(persistence);
    fs::create_directories(c.output_dir);
    a.outputs.push_back(c.output_dir / "metrics.json");
    guard_outputs(a);
    a.outputs.pop_back();
    write_json(c.output_dir / "metrics.json", j, a);
    return j;
}

ojson cmd_inspect(const RunConfig& c, Artifacts& a) {
    const auto panel = load_panel(c, a);
    const auto m = load_model(c, panel, a);
    auto test = eval_windows(panel, m, c.split_ratio);
    if (test.size() > c.inspect_max_samples) test.resize(c.inspect_max_samples);
    const Eigen::MatrixXd h_dist = distance_incidence(panel, m.config());
    const auto graphs = train::build_sample_graphs(test, m.config().K);
    std::vector<std::size_t> idx(test.size());
    std::iota(idx.begin(), idx.end(), 0);
    const auto in = train::make_input(test, idx, h_dist, graphs);

    model::AttentionTrace trace;
    ad::Tape tape;
    tape.set_grad_enabled(false);
    model::ForwardOptions opt;
    opt.trace = &trace;
    m.forward(tape, in, opt);

    introspect::ReportInputs ri;
    ri.trace = &trace;
    ri.view_order = m.config().view_order;
    ri.L_hstb = m.config().L_hstb;
    ri.demand = panel.demand;
    ri.coords = data::station_coords(panel);
    ri.h_dist = h_dist;
    ri.h_rec_demd = in.h_rec_demd;
    ri.h_wek_demd = in.h_wek_demd;
    for (const auto& s : test) {
        ri.rec_windows.push_back(data::demand_channel(s.recent));
        ri.wek_windows.push_back(data::demand_channel(s.weekly));
    }
    const auto report = introspect::build_report(ri);
    const fs::path dir = c.output_dir / "inspect";
    for (const char* n : {"hyperedges.csv", "long.csv", "summary.json"}) a.outputs.push_back(dir / n);
    guard_outputs(a);
    introspect::write_report(report, dir);
    return {{"samples", test.size()},
            {"fusion_view", {{"dist", report.fusion.dist}, {"demd", report.fusion.demd}}},
            {"fusion_timescale", {{"rec", report.fusion.rec}, {"wek", report.fusion.wek}}}};
}

void error_line(std::ostream& err, const char* kind, const std::string& cmd, const std::string& message) {
    ojson j{{"error", kind}, {"subcommand", cmd}, {"message", message}};
    err << j.dump() << '\n';
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"HyperCast: hypergraph attention forecasting of EV charging demand", "hypercast"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    std::string config_path, out_dir;
    std::vector<std::string> overrides;
    bool grid = false;
    std::size_t jobs = 1;
    long log_every = 0;
    auto common = [&](CLI::App* s) {
        s->add_option("-c,--config", config_path, "JSON run config (or a manifest to replay)");
        s->add_option("--set", overrides, "Override a config value, e.g. --set model.d_h=32")->allow_extra_args(false);
        s->add_option("-o,--out", out_dir, "Output directory (overrides output_dir)");
    };
    const std::pair<const char*, const char*> cmds[] = {
        {"prepare", "Sessions + station CSVs -> daily demand panel"},
        {"hypergraph", "Export distance and demand incidence matrices"},
        {"train", "Train a model and write checkpoint + training log"},
        {"forecast", "Forecast every window of a panel"},
        {"evaluate", "Metrics on the chronological test split"},
        {"inspect", "Attention introspection bundle"},
        {"synth", "Write a synthetic demand panel"}};
    for (const auto& [name, help] : cmds) common(app.add_subcommand(name, help));
    auto* tr = app.get_subcommand("train");
    tr->add_flag("--grid", grid, "Run the config's grid stanza instead of a single model");
    tr->add_option("--jobs", jobs, "Grid cells trained concurrently")->check(CLI::PositiveNumber);
    tr->add_option("--log-every", log_every, "Print progress every N epochs to stderr");

    std::vector<std::string> argv(args.rbegin(), args.rend());
    std::string cmd = "hypercast";
    try {
        app.parse(argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForVersion&) {
        out << kVersion << '\n';
        return kOk;
    } catch (const CLI::ParseError& e) {
        error_line(err, "usage", cmd, e.what());
        return kUsage;
    }
    cmd = app.get_subcommands().front()->get_name();
    if (grid && !(cmd == "train")) {
        error_line(err, "usage", cmd, "--grid applies to train only");
        return kUsage;
    }

    try {
        json raw = json::object();
        if (!config_path.empty()) {
            std::ifstream f(config_path);
            if (!f) throw UsageError("cannot open config " + config_path);
            raw = json::parse(f, nullptr, false);
            if (raw.is_discarded()) throw UsageError("config " + config_path + " is not valid JSON");
            if (raw.value("format", "") == "hypercast-manifest") raw = raw.at("config");
        }
        for (const auto& o : overrides) apply_override(raw, o);
        if (!out_dir.empty()) raw["output_dir"] = out_dir;
        const RunConfig c = run_config_from_json(raw);
        if (grid && !c.grid) throw UsageError("--grid given but the config has no grid stanza");
        fs::create_directories(c.output_dir);

        Artifacts a;
        ojson result;
        if (cmd == "synth") result = cmd_synth(c, a);
        else if (cmd == "prepare") result = cmd_prepare(c, a);
        else if (cmd == "hypergraph") result = cmd_hypergraph(c, a);
        else if (cmd == "train") result = grid ? cmd_grid(c, a, jobs) : cmd_train(c, a, err, log_every);
        else if (cmd == "forecast") result = cmd_forecast(c, a);
        else if (cmd == "evaluate") result = cmd_evaluate(c, a);
        else result = cmd_inspect(c, a);
        write_manifest(cmd, c, c.output_dir, a, result);
        out << ojson{{"subcommand", cmd}, {"result", result}}.dump() << '\n';
        return kOk;
    } catch (const ad::NumericError& e) {
        error_line(err, "numeric", cmd, e.what());
        return kNumericError;
    } catch (const UsageError& e) {
        error_line(err, "usage", cmd, e.what());
        return kUsage;
    } catch (const model::ConfigError& e) {
        error_line(err, "config", cmd, e.what());
        return kUsage;
    } catch (const std::exception& e) {
        // Data, file-format, checkpoint and shape problems.
        error_line(err, "data", cmd, e.what());
        return kDataError;
    }
}

}  // namespace hypercast::cli
