#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "fuseqa/csv.hpp"
#include "fuseqa/fusion.hpp"
#include "fuseqa/metrics.hpp"
#include "fuseqa/parallel.hpp"
#include "fuseqa/questions.hpp"
#include "fuseqa/sarprep.hpp"
#include "fuseqa/synth.hpp"
#include "fuseqa/taxonomy.hpp"

namespace fuseqa {

// Error classes map onto the CLI exit-code contract: 1 config, 2 I/O,
// 3 data contract.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Step { A, B, C, Custom };
enum class SplitRegime { Random, Shifted };
enum class FusionMode { NoneS1, NoneS2, Early, Late };

inline std::string_view to_string(Step s) {
    switch (s) {
        case Step::A: return "A";
        case Step::B: return "B";
        case Step::C: return "C";
        default: return "CUSTOM";
    }
}

inline std::string_view to_string(SplitRegime r) { return r == SplitRegime::Random ? "RANDOM" : "SHIFTED"; }

inline std::string_view to_string(FusionMode m) {
    switch (m) {
        case FusionMode::NoneS1: return "NONE_S1";
        case FusionMode::NoneS2: return "NONE_S2";
        case FusionMode::Early: return "EARLY";
        default: return "LATE";
    }
}

struct ExperimentConfig {
    Step step = Step::Custom;
    Nomenclature nom;
    SplitRegime split = SplitRegime::Random;
    bool weighted_loss = true;
    SarMode sar_mode = SarMode::ThreeCh;
    FusionMode fusion = FusionMode::Late;
    TrainConfig train;
    int late_hidden_width = 0;  // 0 -> max(4N, 32)
    SynthConfig synth;
    std::string data_dir;          // non-empty: ingest CSV splits instead of synthesizing
    bool sar_from_rasters = false; // synth only: SAR features from generated VV/VH rasters
    int raster_size = 24;
    std::vector<double> summary_quantiles{0.1, 0.5, 0.9};
    double saturation_lower_q = 0.01, saturation_upper_q = 0.99;
    int questions_per_sample = 25;
    QuestionMix mix;
    std::string questions_path;  // non-empty: ingest QA JSONL instead of generating
    double threshold_beta = 2.0;
    double threshold_grid_step = 0.05;
    bool global_thresholds = false;
    std::uint64_t seed = 0;
};

struct StageResult {
    std::string name;             // "s1", "s2", "fused"
    std::string fusion_tag;       // "early"/"late" for the fused stage
    MetricReport f2;              // classification headline (beta = 2), test split
    MetricReport f1;              // Table-style scores (beta = 1), test split
    double val_f2_macro = 0.0;    // same thresholds applied to the validation split
    ThresholdVector thresholds;
};

struct RunReport {
    nlohmann::json config_echo;
    std::vector<std::string> class_names;
    std::string nom_kind;
    std::optional<StageResult> s1, s2, fused;
    VqaAccuracy vqa;
    std::uint64_t seed = 0;
    double wall_time_s = 0.0;

    // pipeline artifacts, not serialized into the report itself; the CLI
    // writes them next to it so prompt export can run on real outputs
    std::vector<std::vector<QaRecord>> questions;
    std::vector<LabelSet> test_predictions, test_ground_truth;
};

// --- config loading ---------------------------------------------------------

namespace detail {

template <typename T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
}

inline void reject_conflict(bool explicit_given, bool matches, const char* key, Step step) {
    if (explicit_given && !matches)
        throw ConfigError(std::string("'") + key + "' contradicts the step " +
                          std::string(to_string(step)) + " preset");
}

}  // namespace detail

inline std::string bundled_nomenclature_path(const std::string& data_root, NomKind kind) {
    const char* name = kind == NomKind::BENMM19 ? "benmm19.json" : "rsvqa61.json";
    return (std::filesystem::path(data_root) / "nomenclatures" / name).string();
}

// Builds an ExperimentConfig from its JSON document. Step presets pin the
// axes of the A/B/C ladder; explicitly contradicting values are a config
// error rather than silently overridden.
inline ExperimentConfig config_from_json(const nlohmann::json& doc, const std::string& data_root) {
    if (!doc.is_object()) throw ConfigError("experiment config must be a JSON object");
    ExperimentConfig cfg;

    const std::string step_s = detail::get_or<std::string>(doc, "step", "CUSTOM");
    if (step_s == "A") cfg.step = Step::A;
    else if (step_s == "B") cfg.step = Step::B;
    else if (step_s == "C") cfg.step = Step::C;
    else if (step_s == "CUSTOM") cfg.step = Step::Custom;
    else throw ConfigError("unknown step: " + step_s);

    // resolve nomenclature
    std::string nom_kind_s = detail::get_or<std::string>(doc, "nomenclature", "");
    const std::string nom_path = detail::get_or<std::string>(doc, "nomenclature_path", "");
    const int synth_classes = detail::get_or<int>(doc, "synth_classes", 0);
    if (cfg.step != Step::Custom) {
        detail::reject_conflict(!nom_kind_s.empty(), nom_kind_s == "RSVQA61", "nomenclature", cfg.step);
        detail::reject_conflict(!nom_path.empty() || synth_classes > 0, false, "nomenclature", cfg.step);
        nom_kind_s = "RSVQA61";
    }
    try {
        if (!nom_path.empty()) {
            cfg.nom = load_nomenclature_file(nom_path,
                                             nom_kind_s.empty() ? NomKind::CUSTOM : nom_kind_from_string(nom_kind_s));
        } else if (synth_classes > 0) {
            cfg.nom = make_flat_nomenclature(synth_classes);
        } else if (!nom_kind_s.empty() && nom_kind_s != "CUSTOM") {
            const NomKind kind = nom_kind_from_string(nom_kind_s);
            cfg.nom = load_nomenclature_file(bundled_nomenclature_path(data_root, kind), kind);
        } else {
            throw ConfigError("config needs one of: nomenclature, nomenclature_path, synth_classes");
        }
    } catch (const NomenclatureError& e) {
        throw DataError(std::string("invalid nomenclature: ") + e.what());
    } catch (const std::runtime_error& e) {
        if (dynamic_cast<const ConfigError*>(&e)) throw;
        throw IoError(e.what());
    }

    // split regime / weighted loss, with step presets from the A/B/C table
    std::string split_s = detail::get_or<std::string>(doc, "split", "");
    if (cfg.step == Step::A) {
        detail::reject_conflict(!split_s.empty(), split_s == "RANDOM", "split", cfg.step);
        split_s = "RANDOM";
    } else if (cfg.step == Step::B || cfg.step == Step::C) {
        detail::reject_conflict(!split_s.empty(), split_s == "SHIFTED", "split", cfg.step);
        split_s = "SHIFTED";
    } else if (split_s.empty()) {
        split_s = "RANDOM";
    }
    if (split_s == "RANDOM") cfg.split = SplitRegime::Random;
    else if (split_s == "SHIFTED") cfg.split = SplitRegime::Shifted;
    else throw ConfigError("unknown split regime: " + split_s);

    const bool weighted_default = cfg.step != Step::C;
    cfg.weighted_loss = detail::get_or<bool>(doc, "weighted_loss", weighted_default);
    if (cfg.step != Step::Custom)
        detail::reject_conflict(doc.contains("weighted_loss"), cfg.weighted_loss == weighted_default,
                                "weighted_loss", cfg.step);

    try {
        cfg.sar_mode = sar_mode_from_string(detail::get_or<std::string>(doc, "sar_mode", "3ch"));
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    const std::string fusion_s = detail::get_or<std::string>(doc, "fusion", "LATE");
    if (fusion_s == "NONE_S1") cfg.fusion = FusionMode::NoneS1;
    else if (fusion_s == "NONE_S2") cfg.fusion = FusionMode::NoneS2;
    else if (fusion_s == "EARLY") cfg.fusion = FusionMode::Early;
    else if (fusion_s == "LATE") cfg.fusion = FusionMode::Late;
    else throw ConfigError("unknown fusion mode: " + fusion_s);

    cfg.seed = detail::get_or<std::uint64_t>(doc, "seed", 0);

    if (doc.contains("train")) {
        const auto& t = doc.at("train");
        cfg.train.learning_rate = detail::get_or<double>(t, "learning_rate", cfg.train.learning_rate);
        cfg.train.epochs = detail::get_or<int>(t, "epochs", cfg.train.epochs);
        cfg.train.batch_size = detail::get_or<int>(t, "batch_size", cfg.train.batch_size);
        cfg.train.hidden_width = detail::get_or<int>(t, "hidden_width", cfg.train.hidden_width);
        if (cfg.train.learning_rate <= 0 || cfg.train.epochs < 0 || cfg.train.batch_size < 1 ||
            cfg.train.hidden_width < 1)
            throw ConfigError("invalid training hyperparameters");
    }
    cfg.train.seed = cfg.seed;
    cfg.train.weighted = cfg.weighted_loss;
    cfg.late_hidden_width = detail::get_or<int>(doc, "late_hidden_width", 0);

    // synthetic data source
    cfg.data_dir = detail::get_or<std::string>(doc, "data_dir", "");
    cfg.sar_from_rasters = detail::get_or<bool>(doc, "sar_from_rasters", false);
    if (!cfg.data_dir.empty() && cfg.sar_from_rasters)
        throw ConfigError("sar_from_rasters applies to synthetic data only");
    cfg.raster_size = detail::get_or<int>(doc, "raster_size", 24);

    if (cfg.nom.size() >= 6) {
        cfg.synth = complementary_preset(cfg.nom);
    } else {
        // complementary groups need >= 6 classes; fall back to uniform detectability
        cfg.synth.nom = cfg.nom;
        cfg.synth.class_freqs.assign(cfg.nom.size(), 0.3);
        cfg.synth.detect_sar.assign(cfg.nom.size(), 0.7);
        cfg.synth.detect_opt.assign(cfg.nom.size(), 0.9);
        cfg.synth.n_samples = 5000;
    }
    cfg.synth.seed = cfg.seed;
    if (doc.contains("synth")) {
        const auto& s = doc.at("synth");
        cfg.synth.n_samples = detail::get_or<int>(s, "n_samples", cfg.synth.n_samples);
        cfg.synth.noise_sigma = detail::get_or<double>(s, "noise_sigma", cfg.synth.noise_sigma);
        if (s.contains("class_freq")) cfg.synth.class_freqs.assign(cfg.nom.size(), s.at("class_freq").get<double>());
        if (s.contains("class_freqs")) cfg.synth.class_freqs = s.at("class_freqs").get<std::vector<double>>();
        if (s.contains("detect_sar")) cfg.synth.detect_sar = s.at("detect_sar").get<std::vector<double>>();
        if (s.contains("detect_opt")) cfg.synth.detect_opt = s.at("detect_opt").get<std::vector<double>>();
        cfg.synth.feature_dim_sar = detail::get_or<int>(s, "feature_dim_sar", cfg.synth.feature_dim_sar);
        cfg.synth.feature_dim_opt = detail::get_or<int>(s, "feature_dim_opt", cfg.synth.feature_dim_opt);
        if (s.contains("split_fractions")) {
            const auto f = s.at("split_fractions").get<std::vector<double>>();
            if (f.size() != 3) throw ConfigError("split_fractions needs exactly 3 entries");
            cfg.synth.split_fractions = {f[0], f[1], f[2]};
        }
        cfg.synth.volume_class = detail::get_or<int>(s, "volume_class", cfg.synth.volume_class);
        cfg.synth.volume_variance_factor =
            detail::get_or<double>(s, "volume_variance_factor", cfg.synth.volume_variance_factor);
        if (s.contains("domain_shift")) cfg.synth.domain_shift = s.at("domain_shift").get<double>();
    }
    if (cfg.split == SplitRegime::Shifted) {
        if (cfg.synth.domain_shift <= 0.0) cfg.synth.domain_shift = 2.0 * cfg.synth.noise_sigma;
    } else {
        if (cfg.synth.domain_shift != 0.0)
            throw ConfigError("RANDOM split regime requires domain_shift = 0");
    }

    if (doc.contains("questions")) {
        const auto& q = doc.at("questions");
        cfg.questions_per_sample = detail::get_or<int>(q, "count", cfg.questions_per_sample);
        cfg.mix.p_yesno = detail::get_or<double>(q, "p_yesno", cfg.mix.p_yesno);
        cfg.mix.p_conj1 = detail::get_or<double>(q, "p_conj1", cfg.mix.p_conj1);
        cfg.mix.p_conj2 = detail::get_or<double>(q, "p_conj2", cfg.mix.p_conj2);
        cfg.questions_path = detail::get_or<std::string>(q, "path", cfg.questions_path);
    }
    if (doc.contains("threshold")) {
        const auto& t = doc.at("threshold");
        cfg.threshold_beta = detail::get_or<double>(t, "beta", cfg.threshold_beta);
        cfg.threshold_grid_step = detail::get_or<double>(t, "grid_step", cfg.threshold_grid_step);
        cfg.global_thresholds = detail::get_or<bool>(t, "global", cfg.global_thresholds);
        if (cfg.threshold_beta <= 0 || cfg.threshold_grid_step <= 0 || cfg.threshold_grid_step >= 1)
            throw ConfigError("invalid threshold settings");
    }
    return cfg;
}

inline nlohmann::json config_to_json(const ExperimentConfig& cfg) {
    nlohmann::json synth = {{"n_samples", cfg.synth.n_samples},
                            {"noise_sigma", cfg.synth.noise_sigma},
                            {"class_freqs", cfg.synth.class_freqs},
                            {"detect_sar", cfg.synth.detect_sar},
                            {"detect_opt", cfg.synth.detect_opt},
                            {"feature_dim_sar", cfg.synth.dim(Modality::Sar)},
                            {"feature_dim_opt", cfg.synth.dim(Modality::Optical)},
                            {"domain_shift", cfg.synth.domain_shift},
                            {"split_fractions", cfg.synth.split_fractions},
                            {"volume_class", cfg.synth.volume_class},
                            {"volume_variance_factor", cfg.synth.volume_variance_factor}};
    return {{"step", std::string(to_string(cfg.step))},
            {"nomenclature", std::string(to_string(cfg.nom.kind()))},
            {"num_classes", cfg.nom.size()},
            {"split", std::string(to_string(cfg.split))},
            {"weighted_loss", cfg.weighted_loss},
            {"sar_mode", std::string(to_string(cfg.sar_mode))},
            {"sar_from_rasters", cfg.sar_from_rasters},
            {"raster_size", cfg.raster_size},
            {"fusion", std::string(to_string(cfg.fusion))},
            {"train",
             {{"learning_rate", cfg.train.learning_rate},
              {"epochs", cfg.train.epochs},
              {"batch_size", cfg.train.batch_size},
              {"hidden_width", cfg.train.hidden_width}}},
            {"late_hidden_width", cfg.late_hidden_width},
            {"data_dir", cfg.data_dir},
            {"synth", synth},
            {"questions",
             {{"count", cfg.questions_per_sample},
              {"p_yesno", cfg.mix.p_yesno},
              {"p_conj1", cfg.mix.p_conj1},
              {"p_conj2", cfg.mix.p_conj2}}},
            {"threshold",
             {{"beta", cfg.threshold_beta},
              {"grid_step", cfg.threshold_grid_step},
              {"global", cfg.global_thresholds}}},
            {"seed", cfg.seed}};
}

// --- pipeline ----------------------------------------------------------------

namespace detail {

inline SplitData load_split_csv(const std::string& dir, const char* split) {
    namespace fs = std::filesystem;
    SplitData data;
    const auto base = fs::path(dir);
    const std::string sar = (base / (std::string(split) + "_sar.csv")).string();
    const std::string opt = (base / (std::string(split) + "_opt.csv")).string();
    const std::string lab = (base / (std::string(split) + "_labels.csv")).string();
    for (const std::string& p : {sar, opt, lab})
        if (!fs::exists(p)) throw IoError("missing data file: " + p);
    data.sar = load_matrix_csv(sar);
    data.opt = load_matrix_csv(opt);
    data.labels = load_labels_csv(lab);
    if (data.sar.size() != data.labels.size() || data.opt.size() != data.labels.size())
        throw DataError(std::string("split '") + split + "' has misaligned feature/label files");
    return data;
}

// Replaces the synthetic SAR feature vectors with summary features of
// generated VV/VH rasters, assembled per the configured channel mode.
// Saturation bounds come from the training split only.
inline void rasterize_sar_features(SynthDataset& ds, const ExperimentConfig& cfg) {
    const int channels = cfg.sar_mode == SarMode::TwoCh ? 2 : 3;
    auto stack_raw = [&](const LabelSet& labels, std::int64_t index) {
        auto [vv, vh] = gen_sar_pair(labels, cfg.synth, cfg.raster_size, index);
        Raster stacked = Raster::make(vv.width, vv.height, channels, "dB");
        const std::size_t plane = stacked.plane_size();
        std::copy(vv.data.begin(), vv.data.end(), stacked.data.begin());
        std::copy(vh.data.begin(), vh.data.end(), stacked.data.begin() + plane);
        if (channels == 3) {
            const Raster ratio = make_ratio_channel(vv, vh);
            std::copy(ratio.data.begin(), ratio.data.end(), stacked.data.begin() + 2 * plane);
        }
        return stacked;
    };

    std::int64_t offset = 0;
    std::vector<Raster> train_stacks(ds.train.size());
    parallel_for(ds.train.size(), [&](std::size_t i) {
        train_stacks[i] = stack_raw(ds.train.labels[i], static_cast<std::int64_t>(i));
    });
    const SaturationBounds bounds =
        compute_saturation_bounds(train_stacks, cfg.saturation_lower_q, cfg.saturation_upper_q);

    auto featurize_split = [&](SplitData& split, std::span<const Raster> ready) {
        parallel_for(split.size(), [&](std::size_t i) {
            Raster stacked = ready.empty() ? stack_raw(split.labels[i], offset + static_cast<std::int64_t>(i))
                                           : ready[i];
            split.sar[i] = summarize_features(normalize_channel(stacked, bounds), cfg.summary_quantiles);
        });
        offset += static_cast<std::int64_t>(split.size());
    };
    featurize_split(ds.train, train_stacks);
    featurize_split(ds.val, {});
    featurize_split(ds.test, {});
}

struct TrainedStage {
    MlpModel model;
    std::vector<ProbVector> train_probs, val_probs, test_probs;
};

inline TrainedStage train_stage(std::span<const FeatureVector> tr, std::span<const FeatureVector> va,
                                std::span<const FeatureVector> te, std::span<const LabelSet> labels,
                                std::span<const double> w, const TrainConfig& tc) {
    TrainedStage st;
    st.model = train_classifier(tr, labels, w, tc);
    auto predict_all = [&](std::span<const FeatureVector> xs, std::vector<ProbVector>& out) {
        out.resize(xs.size());
        parallel_for(xs.size(), [&](std::size_t i) { out[i] = predict_probs(st.model, xs[i]); });
    };
    predict_all(tr, st.train_probs);
    predict_all(va, st.val_probs);
    predict_all(te, st.test_probs);
    return st;
}

inline StageResult score_stage(const std::string& name, const std::string& fusion_tag,
                               std::span<const ProbVector> val_probs, std::span<const ProbVector> test_probs,
                               std::span<const LabelSet> val_labels, std::span<const LabelSet> test_labels,
                               const ExperimentConfig& cfg, std::vector<LabelSet>* test_pred_out) {
    StageResult sr;
    sr.name = name;
    sr.fusion_tag = fusion_tag;
    sr.thresholds = cfg.global_thresholds
                        ? optimize_global_threshold(val_probs, val_labels, cfg.threshold_beta, cfg.threshold_grid_step)
                        : optimize_thresholds(val_probs, val_labels, cfg.threshold_beta, cfg.threshold_grid_step);
    std::vector<LabelSet> preds(test_probs.size());
    parallel_for(test_probs.size(), [&](std::size_t i) { preds[i] = apply_thresholds(test_probs[i], sr.thresholds); });
    sr.f2 = compute_report(preds, test_labels, 2.0, cfg.nom);
    sr.f1 = compute_report(preds, test_labels, 1.0, cfg.nom);
    std::vector<LabelSet> val_preds(val_probs.size());
    parallel_for(val_probs.size(), [&](std::size_t i) { val_preds[i] = apply_thresholds(val_probs[i], sr.thresholds); });
    sr.val_f2_macro = compute_report(val_preds, val_labels, 2.0, cfg.nom).macro;
    if (test_pred_out) *test_pred_out = std::move(preds);
    return sr;
}

}  // namespace detail

// Full pipeline: data -> per-modality heads -> fusion -> validation
// thresholds -> test metrics -> seeded questions -> VQA scores.
inline RunReport run_experiment(const ExperimentConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    RunReport report;
    report.config_echo = config_to_json(cfg);
    report.seed = cfg.seed;
    report.nom_kind = std::string(to_string(cfg.nom.kind()));
    for (const auto& c : cfg.nom.classes()) report.class_names.push_back(c.name);

    // data
    SplitData train, val, test;
    if (!cfg.data_dir.empty()) {
        train = detail::load_split_csv(cfg.data_dir, "train");
        val = detail::load_split_csv(cfg.data_dir, "val");
        test = detail::load_split_csv(cfg.data_dir, "test");
        for (const SplitData* s : {&train, &val, &test})
            for (const LabelSet& ls : s->labels)
                if (ls.size() != cfg.nom.size())
                    throw DataError("ingested labels do not match the nomenclature size");
    } else {
        SynthDataset ds = gen_dataset(cfg.synth);
        if (cfg.sar_from_rasters) detail::rasterize_sar_features(ds, cfg);
        train = std::move(ds.train);
        val = std::move(ds.val);
        test = std::move(ds.test);
    }
    if (train.labels.empty() || val.labels.empty() || test.labels.empty())
        throw DataError("every split must be non-empty");

    const std::vector<double> freqs = class_frequencies(train.labels);
    const ClassWeights weights = inverse_frequency_weights(freqs, train.labels.size());

    const bool need_s1 = cfg.fusion == FusionMode::NoneS1 || cfg.fusion == FusionMode::Late;
    const bool need_s2 = cfg.fusion == FusionMode::NoneS2 || cfg.fusion == FusionMode::Late;

    std::vector<LabelSet> final_preds;
    std::optional<detail::TrainedStage> s1, s2;
    if (need_s1) {
        TrainConfig tc = cfg.train;
        tc.seed = derive_seed(cfg.seed, {0x51});
        s1 = detail::train_stage(train.sar, val.sar, test.sar, train.labels, weights, tc);
        const bool is_final = cfg.fusion == FusionMode::NoneS1;
        report.s1 = detail::score_stage("s1", "", s1->val_probs, s1->test_probs, val.labels, test.labels, cfg,
                                        is_final ? &final_preds : nullptr);
    }
    if (need_s2) {
        TrainConfig tc = cfg.train;
        tc.seed = derive_seed(cfg.seed, {0x52});
        s2 = detail::train_stage(train.opt, val.opt, test.opt, train.labels, weights, tc);
        const bool is_final = cfg.fusion == FusionMode::NoneS2;
        report.s2 = detail::score_stage("s2", "", s2->val_probs, s2->test_probs, val.labels, test.labels, cfg,
                                        is_final ? &final_preds : nullptr);
    }

    if (cfg.fusion == FusionMode::Early) {
        TrainConfig tc = cfg.train;
        tc.seed = derive_seed(cfg.seed, {0xEF});
        const MlpModel model = early_fuse_train(train.sar, train.opt, train.labels, weights, tc);
        std::vector<ProbVector> val_probs(val.size()), test_probs(test.size());
        parallel_for(val.size(), [&](std::size_t i) { val_probs[i] = predict_probs(model, concat(val.sar[i], val.opt[i])); });
        parallel_for(test.size(), [&](std::size_t i) { test_probs[i] = predict_probs(model, concat(test.sar[i], test.opt[i])); });
        report.fused =
            detail::score_stage("fused", "early", val_probs, test_probs, val.labels, test.labels, cfg, &final_preds);
    } else if (cfg.fusion == FusionMode::Late) {
        TrainConfig tc = cfg.train;
        tc.seed = derive_seed(cfg.seed, {0x1F});
        tc.hidden_width = cfg.late_hidden_width > 0
                              ? cfg.late_hidden_width
                              : std::max(4 * static_cast<int>(cfg.nom.size()), 32);
        const MlpModel model = late_fuse_train(s1->train_probs, s2->train_probs, train.labels, weights, tc);
        std::vector<ProbVector> val_probs(val.size()), test_probs(test.size());
        parallel_for(val.size(), [&](std::size_t i) {
            val_probs[i] = late_fuse_predict(model, s1->val_probs[i], s2->val_probs[i]);
        });
        parallel_for(test.size(), [&](std::size_t i) {
            test_probs[i] = late_fuse_predict(model, s1->test_probs[i], s2->test_probs[i]);
        });
        report.fused =
            detail::score_stage("fused", "late", val_probs, test_probs, val.labels, test.labels, cfg, &final_preds);
    }

    // questions over the test split, answered from predicted vs true labels
    std::vector<std::vector<QaRecord>> questions(test.size());
    if (!cfg.questions_path.empty()) {
        for (QaRecord& rec : load_qa_jsonl(cfg.questions_path)) {
            if (rec.sample_id < 0 || rec.sample_id >= static_cast<std::int64_t>(test.size()))
                throw DataError("question sample_id " + std::to_string(rec.sample_id) +
                                " outside the test split");
            questions[static_cast<std::size_t>(rec.sample_id)].push_back(std::move(rec));
        }
    } else {
        parallel_for(test.size(), [&](std::size_t i) {
            questions[i] = generate_questions(test.labels[i], cfg.nom, cfg.questions_per_sample, cfg.mix,
                                              cfg.seed, static_cast<std::int64_t>(i));
        });
    }
    report.vqa = evaluate_vqa(final_preds, test.labels, questions, cfg.nom);
    parallel_for(test.size(), [&](std::size_t i) {
        for (QaRecord& rec : questions[i])
            rec.predicted = answer(parse_question(rec.question, cfg.nom), final_preds[i], cfg.nom);
    });
    report.questions = std::move(questions);
    report.test_predictions = std::move(final_preds);
    report.test_ground_truth = test.labels;

    report.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

// --- report serialization ----------------------------------------------------

inline nlohmann::json stage_to_json(const StageResult& sr) {
    return {{"name", sr.name},
            {"fusion", sr.fusion_tag},
            {"f2", to_json(sr.f2)},
            {"f1", to_json(sr.f1)},
            {"val_f2_macro", sr.val_f2_macro},
            {"thresholds", sr.thresholds}};
}

inline nlohmann::json report_to_json(const RunReport& r) {
    nlohmann::json vqa = {{"global", r.vqa.global}, {"total", r.vqa.total}};
    vqa["yes_no"] = r.vqa.yes_no ? nlohmann::json(*r.vqa.yes_no) : nlohmann::json(nullptr);
    vqa["land_cover"] = r.vqa.land_cover ? nlohmann::json(*r.vqa.land_cover) : nlohmann::json(nullptr);
    return {{"config", r.config_echo},
            {"nomenclature", {{"kind", r.nom_kind}, {"classes", r.class_names}}},
            {"seed", r.seed},
            {"stages",
             {{"s1", r.s1 ? stage_to_json(*r.s1) : nlohmann::json(nullptr)},
              {"s2", r.s2 ? stage_to_json(*r.s2) : nlohmann::json(nullptr)},
              {"fused", r.fused ? stage_to_json(*r.fused) : nlohmann::json(nullptr)}}},
            {"vqa", vqa},
            {"wall_time_s", r.wall_time_s}};
}

// Table-shaped CSV: one row per stage, VQA columns on the final stage.
inline std::string report_to_csv(const RunReport& r) {
    std::ostringstream out;
    out << "stage,f2_macro,f1_micro,hd,mr,ga,yn_a,lc_a\n";
    auto fmt_opt = [](const std::optional<double>& v) { return v ? std::to_string(*v) : std::string(); };
    auto row = [&](const StageResult& sr, bool is_final) {
        out << sr.name << (sr.fusion_tag.empty() ? "" : "_" + sr.fusion_tag) << ',' << sr.f2.macro << ','
            << sr.f1.micro << ',' << sr.f1.hd << ',' << sr.f1.mr;
        if (is_final)
            out << ',' << r.vqa.global << ',' << fmt_opt(r.vqa.yes_no) << ',' << fmt_opt(r.vqa.land_cover);
        else
            out << ",,,";
        out << '\n';
    };
    const std::string final_name = r.fused ? "fused" : (r.s1 ? "s1" : "s2");
    if (r.s1) row(*r.s1, final_name == "s1");
    if (r.s2) row(*r.s2, final_name == "s2");
    if (r.fused) row(*r.fused, true);
    return out.str();
}

// --- report comparison ---------------------------------------------------------

namespace detail {

inline const nlohmann::json& final_stage(const nlohmann::json& report) {
    const auto& stages = report.at("stages");
    if (!stages.at("fused").is_null()) return stages.at("fused");
    if (!stages.at("s1").is_null()) return stages.at("s1");
    if (!stages.at("s2").is_null()) return stages.at("s2");
    throw DataError("report has no stages");
}

}  // namespace detail

// Side-by-side comparison of run reports: headline metric deltas relative
// to the first report plus a per-class F1 table with winner flags.
inline nlohmann::json compare_reports(std::span<const nlohmann::json> reports) {
    if (reports.size() < 2) throw ConfigError("compare needs at least two reports");
    const auto classes = reports.front().at("nomenclature").at("classes").get<std::vector<std::string>>();
    for (const auto& r : reports)
        if (r.at("nomenclature").at("classes").get<std::vector<std::string>>() != classes)
            throw DataError("reports use different nomenclatures");

    struct MetricDef {
        const char* key;
        bool higher_is_better;
    };
    const std::vector<MetricDef> defs = {{"f2_macro", true}, {"f1_micro", true}, {"hd", false},
                                         {"mr", true},       {"ga", true},       {"yn_a", true},
                                         {"lc_a", true}};

    auto headline = [](const nlohmann::json& report) {
        const auto& fs = detail::final_stage(report);
        nlohmann::json h;
        h["f2_macro"] = fs.at("f2").at("macro");
        h["f1_micro"] = fs.at("f1").at("micro");
        h["hd"] = fs.at("f1").at("hamming_distance");
        h["mr"] = fs.at("f1").at("match_ratio");
        h["ga"] = report.at("vqa").at("global");
        h["yn_a"] = report.at("vqa").at("yes_no");
        h["lc_a"] = report.at("vqa").at("land_cover");
        return h;
    };

    nlohmann::json metrics = nlohmann::json::array();
    std::vector<nlohmann::json> heads;
    for (const auto& r : reports) heads.push_back(headline(r));
    for (const auto& def : defs) {
        nlohmann::json row;
        row["metric"] = def.key;
        nlohmann::json values = nlohmann::json::array();
        int winner = -1;
        double best = 0.0;
        for (std::size_t i = 0; i < heads.size(); ++i) {
            const auto& v = heads[i].at(def.key);
            values.push_back(v);
            if (v.is_null()) continue;
            const double x = v.get<double>();
            if (winner < 0 || (def.higher_is_better ? x > best : x < best)) {
                best = x;
                winner = static_cast<int>(i);
            }
        }
        row["values"] = values;
        nlohmann::json deltas = nlohmann::json::array();
        for (std::size_t i = 0; i < heads.size(); ++i) {
            const auto& v = heads[i].at(def.key);
            const auto& v0 = heads[0].at(def.key);
            deltas.push_back(v.is_null() || v0.is_null() ? nlohmann::json(nullptr)
                                                         : nlohmann::json(v.get<double>() - v0.get<double>()));
        }
        row["delta_vs_first"] = deltas;
        row["winner"] = winner;
        metrics.push_back(std::move(row));
    }

    nlohmann::json per_class = nlohmann::json::array();
    for (std::size_t j = 0; j < classes.size(); ++j) {
        nlohmann::json row;
        row["class"] = classes[j];
        nlohmann::json values = nlohmann::json::array();
        int winner = -1;
        double best = -1.0;
        for (std::size_t i = 0; i < reports.size(); ++i) {
            const double f1 = detail::final_stage(reports[i]).at("f1").at("per_class").at(j).at("f").get<double>();
            values.push_back(f1);
            if (f1 > best) {
                best = f1;
                winner = static_cast<int>(i);
            }
        }
        row["f1"] = values;
        row["winner"] = winner;
        per_class.push_back(std::move(row));
    }

    return {{"reports", reports.size()}, {"metrics", metrics}, {"per_class_f1", per_class}};
}

inline std::string comparison_to_csv(const nlohmann::json& cmp) {
    std::ostringstream out;
    const std::size_t n = cmp.at("reports").get<std::size_t>();
    out << "metric";
    for (std::size_t i = 0; i < n; ++i) out << ",run" << i;
    out << ",winner\n";
    for (const auto& row : cmp.at("metrics")) {
        out << row.at("metric").get<std::string>();
        for (const auto& v : row.at("values")) out << ',' << (v.is_null() ? "" : v.dump());
        out << ',' << row.at("winner").get<int>() << '\n';
    }
    out << "\nclass";
    for (std::size_t i = 0; i < n; ++i) out << ",f1_run" << i;
    out << ",winner\n";
    for (const auto& row : cmp.at("per_class_f1")) {
        out << '"' << row.at("class").get<std::string>() << '"';
        for (const auto& v : row.at("f1")) out << ',' << v.dump();
        out << ',' << row.at("winner").get<int>() << '\n';
    }
    return out.str();
}

// write-temp-then-rename so partial files are never observed
inline void write_file_atomic(const std::string& path, std::string_view content) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    const fs::path tmp = target.parent_path() / (target.filename().string() + ".tmp");
    {
        std::ofstream out(tmp);
        if (!out) throw IoError("cannot write " + tmp.string());
        out << content;
    }
    fs::rename(tmp, target);
}

}  // namespace fuseqa
