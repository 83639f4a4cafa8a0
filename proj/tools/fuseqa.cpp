// fuseqa command-line tool: preprocessing, experiment runs, report
// comparison and prompt export. Exit codes: 0 success, 1 config error,
// 2 I/O error, 3 data-contract violation.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fuseqa/csv.hpp"
#include "fuseqa/experiment.hpp"
#include "fuseqa/questions.hpp"
#include "fuseqa/sarprep.hpp"
#include "fuseqa/synth.hpp"
#include "fuseqa/taxonomy.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string default_data_root() {
    if (const char* env = std::getenv("FUSEQA_DATA")) return env;
    return "data";
}

int cmd_preprocess(const std::string& in_dir, const std::string& out_dir, const std::string& mode_s,
                   double lower_q, double upper_q) {
    const fuseqa::SarMode mode = fuseqa::sar_mode_from_string(mode_s);

    std::vector<std::string> basenames;
    for (const auto& entry : fs::directory_iterator(in_dir)) {
        const std::string name = entry.path().filename().string();
        const std::string suffix = ".vv.json";
        if (name.size() > suffix.size() && name.ends_with(suffix))
            basenames.push_back(name.substr(0, name.size() - suffix.size()));
    }
    std::sort(basenames.begin(), basenames.end());
    if (basenames.empty()) throw fuseqa::IoError("no .vv.json sidecars found in " + in_dir);

    std::vector<std::string> missing;
    for (const auto& base : basenames)
        for (const char* part : {".vv.bin", ".vh.bin", ".vh.json"})
            if (!fs::exists(fs::path(in_dir) / (base + part)))
                missing.push_back((fs::path(in_dir) / (base + part)).string());
    if (!missing.empty()) {
        std::string msg = "missing raster files:";
        for (const auto& m : missing) msg += "\n  " + m;
        throw fuseqa::IoError(msg);
    }

    const int channels = mode == fuseqa::SarMode::TwoCh ? 2 : 3;
    std::vector<fuseqa::Raster> stacked;
    stacked.reserve(basenames.size());
    for (const auto& base : basenames) {
        const fuseqa::Raster vv = fuseqa::load_raster((fs::path(in_dir) / (base + ".vv")).string());
        const fuseqa::Raster vh = fuseqa::load_raster((fs::path(in_dir) / (base + ".vh")).string());
        fuseqa::Raster raw = fuseqa::Raster::make(vv.width, vv.height, channels, "dB");
        const std::size_t plane = raw.plane_size();
        std::copy(vv.data.begin(), vv.data.end(), raw.data.begin());
        std::copy(vh.data.begin(), vh.data.end(), raw.data.begin() + plane);
        if (channels == 3) {
            const fuseqa::Raster ratio = fuseqa::make_ratio_channel(vv, vh);
            std::copy(ratio.data.begin(), ratio.data.end(), raw.data.begin() + 2 * plane);
        }
        stacked.push_back(std::move(raw));
    }

    const fuseqa::SaturationBounds bounds = fuseqa::compute_saturation_bounds(stacked, lower_q, upper_q);
    fs::create_directories(out_dir);
    fuseqa::write_file_atomic((fs::path(out_dir) / "bounds.json").string(),
                              fuseqa::to_json(bounds).dump(2) + "\n");
    const std::string tag = mode == fuseqa::SarMode::TwoCh ? ".sar2ch" : ".sar3ch";
    for (std::size_t i = 0; i < basenames.size(); ++i) {
        const fuseqa::Raster norm = fuseqa::normalize_channel(stacked[i], bounds);
        fuseqa::save_raster(norm, (fs::path(out_dir) / (basenames[i] + tag)).string());
    }
    std::cout << "preprocessed " << basenames.size() << " raster pair(s) -> " << out_dir << "\n";
    return 0;
}

int cmd_run(const std::string& config_path, long long seed_override, const std::string& out_dir,
            const std::string& format, const std::string& data_root) {
    std::ifstream in(config_path);
    if (!in) throw fuseqa::IoError("cannot open config: " + config_path);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw fuseqa::ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (seed_override >= 0) doc["seed"] = static_cast<std::uint64_t>(seed_override);

    fuseqa::ExperimentConfig cfg;
    try {
        cfg = fuseqa::config_from_json(doc, data_root);
    } catch (const json::exception& e) {
        throw fuseqa::ConfigError(std::string("bad config value: ") + e.what());
    }
    const fuseqa::RunReport report = fuseqa::run_experiment(cfg);
    const json report_json = fuseqa::report_to_json(report);
    const std::string csv = fuseqa::report_to_csv(report);

    if (out_dir.empty()) {
        if (format == "csv") std::cout << csv;
        else std::cout << report_json.dump(2) << "\n";
    } else {
        fuseqa::write_file_atomic((fs::path(out_dir) / "report.json").string(), report_json.dump(2) + "\n");
        fuseqa::write_file_atomic((fs::path(out_dir) / "report.csv").string(), csv);
        fuseqa::save_qa_jsonl(report.questions, (fs::path(out_dir) / "questions.jsonl").string());
        fuseqa::save_labels_csv(report.test_predictions, (fs::path(out_dir) / "test_pred_labels.csv").string());
        fuseqa::save_labels_csv(report.test_ground_truth, (fs::path(out_dir) / "test_gt_labels.csv").string());
        std::cout << "report written to " << out_dir << "\n";
    }
    return 0;
}

// materializes the synthetic dataset of a config as CSV splits the `run`
// command can ingest through data_dir
int cmd_gen_data(const std::string& config_path, long long seed_override, const std::string& out_dir,
                 const std::string& data_root) {
    std::ifstream in(config_path);
    if (!in) throw fuseqa::IoError("cannot open config: " + config_path);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw fuseqa::ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (seed_override >= 0) doc["seed"] = static_cast<std::uint64_t>(seed_override);
    fuseqa::ExperimentConfig cfg;
    try {
        cfg = fuseqa::config_from_json(doc, data_root);
    } catch (const json::exception& e) {
        throw fuseqa::ConfigError(std::string("bad config value: ") + e.what());
    }
    const fuseqa::SynthDataset ds = fuseqa::gen_dataset(cfg.synth);

    fs::create_directories(out_dir);
    auto dump_split = [&](const fuseqa::SplitData& split, const char* name) {
        fuseqa::save_matrix_csv(split.sar, (fs::path(out_dir) / (std::string(name) + "_sar.csv")).string());
        fuseqa::save_matrix_csv(split.opt, (fs::path(out_dir) / (std::string(name) + "_opt.csv")).string());
        fuseqa::save_labels_csv(split.labels,
                                (fs::path(out_dir) / (std::string(name) + "_labels.csv")).string());
    };
    dump_split(ds.train, "train");
    dump_split(ds.val, "val");
    dump_split(ds.test, "test");
    fuseqa::write_file_atomic((fs::path(out_dir) / "config.json").string(),
                              fuseqa::config_to_json(cfg).dump(2) + "\n");
    std::cout << "dataset written to " << out_dir << " (" << ds.train.size() << "/" << ds.val.size() << "/"
              << ds.test.size() << " samples)\n";
    return 0;
}

int cmd_compare(const std::vector<std::string>& report_paths, const std::string& out_path,
                const std::string& format) {
    std::vector<json> reports;
    for (const auto& path : report_paths) {
        std::ifstream in(path);
        if (!in) throw fuseqa::IoError("cannot open report: " + path);
        try {
            reports.push_back(json::parse(in));
        } catch (const json::exception& e) {
            throw fuseqa::DataError("report " + path + " is not valid JSON: " + e.what());
        }
    }
    const json cmp = fuseqa::compare_reports(reports);
    const std::string rendered = format == "csv" ? fuseqa::comparison_to_csv(cmp) : cmp.dump(2) + "\n";
    if (out_path.empty()) std::cout << rendered;
    else fuseqa::write_file_atomic(out_path, rendered);
    return 0;
}

int cmd_export_prompts(const std::string& labels_path, const std::string& questions_path,
                       const std::string& out_path, const std::string& nom_kind,
                       const std::string& nom_path, const std::string& data_root) {
    fuseqa::Nomenclature nom;
    if (!nom_path.empty()) {
        nom = fuseqa::load_nomenclature_file(nom_path);
    } else {
        const fuseqa::NomKind kind = fuseqa::nom_kind_from_string(nom_kind);
        if (kind == fuseqa::NomKind::CUSTOM)
            throw fuseqa::ConfigError("CUSTOM nomenclature requires --nomenclature-path");
        nom = fuseqa::load_nomenclature_file(fuseqa::bundled_nomenclature_path(data_root, kind), kind);
    }

    if (!fs::exists(labels_path)) throw fuseqa::IoError("missing labels file: " + labels_path);
    if (!fs::exists(questions_path)) throw fuseqa::IoError("missing questions file: " + questions_path);
    const std::vector<fuseqa::LabelSet> labels = fuseqa::load_labels_csv(labels_path);
    for (const auto& ls : labels)
        if (ls.size() != nom.size())
            throw fuseqa::DataError("label width does not match the nomenclature");
    std::vector<fuseqa::QaRecord> records = fuseqa::load_qa_jsonl(questions_path);
    std::stable_sort(records.begin(), records.end(),
                     [](const fuseqa::QaRecord& a, const fuseqa::QaRecord& b) { return a.sample_id < b.sample_id; });

    std::string out;
    for (const auto& rec : records) {
        if (rec.sample_id < 0 || rec.sample_id >= static_cast<std::int64_t>(labels.size()))
            throw fuseqa::DataError("question sample_id " + std::to_string(rec.sample_id) +
                                    " has no matching label row");
        const auto& ls = labels[static_cast<std::size_t>(rec.sample_id)];
        json line = {{"context", fuseqa::list_classes(ls, nom)},
                     {"question", rec.question},
                     {"answer", rec.answer}};
        out += line.dump();
        out += '\n';
    }
    fuseqa::write_file_atomic(out_path, out);
    std::cout << "wrote " << records.size() << " prompt line(s) to " << out_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Two-stage SAR/optical land-cover classification and template-question answering pipeline"};
    app.require_subcommand(1);
    app.fallthrough();  // lets --data appear after the subcommand name

    std::string data_root = default_data_root();
    app.add_option("--data", data_root, "Directory holding the bundled nomenclature files")
        ->envname("FUSEQA_DATA");

    auto* prep = app.add_subcommand("preprocess", "Assemble and normalize SAR raster pairs");
    std::string prep_in, prep_out, prep_mode = "3ch";
    double lower_q = 0.01, upper_q = 0.99;
    prep->add_option("--in", prep_in, "Input directory with <base>.vv/.vh raster pairs")->required();
    prep->add_option("--out", prep_out, "Output directory")->required();
    prep->add_option("--mode", prep_mode, "Channel mode: 2ch or 3ch");
    prep->add_option("--lower-q", lower_q, "Lower saturation quantile");
    prep->add_option("--upper-q", upper_q, "Upper saturation quantile");

    auto* run = app.add_subcommand("run", "Run an experiment from a JSON config");
    std::string run_config, run_out, run_format = "json";
    long long run_seed = -1;
    run->add_option("--config", run_config, "Experiment config JSON")->required();
    run->add_option("--seed", run_seed, "Override the config seed");
    run->add_option("--out", run_out, "Output directory (stdout when omitted)");
    run->add_option("--format", run_format, "Stdout format: json or csv")
        ->check(CLI::IsMember({"json", "csv"}));

    auto* gen = app.add_subcommand("gen-data", "Write a config's synthetic dataset as CSV splits");
    std::string gen_config, gen_out;
    long long gen_seed = -1;
    gen->add_option("--config", gen_config, "Experiment config JSON")->required();
    gen->add_option("--seed", gen_seed, "Override the config seed");
    gen->add_option("--out", gen_out, "Output directory")->required();

    auto* cmp = app.add_subcommand("compare", "Compare two or more run reports");
    std::vector<std::string> cmp_reports;
    std::string cmp_out, cmp_format = "json";
    cmp->add_option("reports", cmp_reports, "Report JSON files")->expected(-2);
    cmp->add_option("--out", cmp_out, "Output file (stdout when omitted)");
    cmp->add_option("--format", cmp_format, "Output format: json or csv")
        ->check(CLI::IsMember({"json", "csv"}));

    auto* exp = app.add_subcommand("export-prompts", "Export language-model prompts as JSONL");
    std::string exp_labels, exp_questions, exp_out, exp_nom = "RSVQA61", exp_nom_path;
    exp->add_option("--labels", exp_labels, "Label matrix CSV")->required();
    exp->add_option("--questions", exp_questions, "Question JSONL")->required();
    exp->add_option("--out", exp_out, "Output JSONL path")->required();
    exp->add_option("--nomenclature", exp_nom, "BENMM19, RSVQA61 or CUSTOM");
    exp->add_option("--nomenclature-path", exp_nom_path, "Explicit nomenclature file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (prep->parsed()) return cmd_preprocess(prep_in, prep_out, prep_mode, lower_q, upper_q);
        if (run->parsed()) return cmd_run(run_config, run_seed, run_out, run_format, data_root);
        if (gen->parsed()) return cmd_gen_data(gen_config, gen_seed, gen_out, data_root);
        if (cmp->parsed()) return cmd_compare(cmp_reports, cmp_out, cmp_format);
        if (exp->parsed())
            return cmd_export_prompts(exp_labels, exp_questions, exp_out, exp_nom, exp_nom_path, data_root);
    } catch (const fuseqa::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const fuseqa::IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 2;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
