// octforge: synthetic-corpus generation, intrinsic-clue inspection, two-stage
// training, inference and cross-manipulation protocol runs from one binary.
//
// stdout carries machine-readable JSON only; human-readable logs go to stderr.
// Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "octforge/harness.hpp"
#include "octforge/synthgen.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace octforge;

namespace {

double parse_lambda(const std::string& s) {
    if (s == "auto") return -1.0;
    try {
        size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size() || v < 0.0) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw DataError("--lambda must be 'auto' or a non-negative number, got '" + s + "'");
    }
}

void add_train_options(CLI::App* sub, TrainConfig& cfg) {
    sub->add_option("--preset", cfg.preset, "backbone preset (desk-10 or resnet-34)")
        ->check(CLI::IsMember({"desk-10", "resnet-34"}));
    sub->add_option("--alpha", cfg.alpha, "octave ratio");
    sub->add_option("--stage1-batch", cfg.stage1_batch, "stage-1 mini-batch size");
    sub->add_option("--stage2-batch", cfg.stage2_domain_batch, "stage-2 per-domain batch size");
    sub->add_option("--lr1", cfg.lr_stage1, "stage-1 initial learning rate");
    sub->add_option("--lr2", cfg.lr_stage2, "stage-2 initial learning rate");
    sub->add_option("--stage1-max-epochs", cfg.stage1_max_epochs, "stage-1 epoch cap");
    sub->add_option("--stage2-max-epochs", cfg.stage2_max_epochs, "stage-2 epoch cap");
    sub->add_option("--probe-epochs", cfg.probe_epochs, "lambda-selection probe length");
}

void log_resolved_config(CLI::App* sub) {
    std::cerr << "[config] resolved settings for '" << sub->get_name() << "':\n";
    std::string conf = sub->config_to_str(true, false);
    std::istringstream is(conf);
    std::string line;
    while (std::getline(is, line))
        if (!line.empty()) std::cerr << "[config]   " << line << "\n";
}

int cmd_synth(const std::string& out_dir, int count, uint64_t seed,
              std::vector<std::string> families) {
    if (families.empty()) families = synth::fake_families();
    synth::CorpusOptions opt;
    opt.out_dir = out_dir;
    opt.count = count;
    opt.seed = seed;
    opt.families = families;
    auto records = synth::generate_corpus(opt);
    json j;
    j["out"] = out_dir;
    j["manifest"] = (fs::path(out_dir) / "manifest.csv").string();
    j["rows"] = records.size();
    j["count_per_class"] = count;
    j["families"] = families;
    j["seed"] = seed;
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_inspect(const std::string& image_path, const std::string& dump_cdi,
                const std::string& dump_si) {
    RgbImage img = load_png(image_path);
    auto [grid, crops] = crop_parts(img);
    json j;
    j["image"] = image_path;
    j["size"] = {img.height, img.width};
    j["crops"] = crops.size();
    json per_crop = json::array();
    double mean_hf = 0.0;
    for (size_t i = 0; i < crops.size(); ++i) {
        Cdi cdi = compute_cdi(crops[i]);
        const double hf = hf_of_cdi(cdi);
        mean_hf += hf / double(crops.size());
        json c;
        c["anchor"] = {grid.offsets[i].first, grid.offsets[i].second};
        c["hf_cdi"] = hf;
        per_crop.push_back(c);
    }
    j["per_crop"] = per_crop;
    j["hf_cdi_mean"] = mean_hf;
    if (!dump_cdi.empty()) {
        save_png(dump_cdi, cdi_to_image(compute_cdi(crops[0])));
        j["cdi_dump"] = dump_cdi;
    }
    if (!dump_si.empty()) {
        save_png_gray(dump_si, si_to_gray(compute_si(crops[0])), kCropSize, kCropSize);
        j["si_dump"] = dump_si;
    }
    std::cout << j.dump(2) << "\n";
    return 0;
}

DetectorModel<float> model_from_checkpoint(const CheckpointData& ckpt) {
    const std::string preset =
        ckpt.at("__meta/preset")[0] == 0.f ? "desk-10" : "resnet-34";
    const double alpha = double(ckpt.at("__meta/alpha")[0]);
    DetectorModel<float> model(preset, alpha, 0);
    model.restore_tensors(ckpt);
    return model;
}

int cmd_eval(const std::string& image_path, const std::string& ckpt_path) {
    CheckpointData ckpt = load_checkpoint_file(ckpt_path);
    DetectorModel<float> model = model_from_checkpoint(ckpt);
    RgbImage img = load_png(image_path);
    ImagePrediction pred = predict_image(img, model);
    json j;
    j["image"] = image_path;
    j["verdict"] = pred.fake ? "fake" : "real";
    json crops = json::array();
    for (size_t i = 0; i < pred.crop_fake.size(); ++i) {
        json c;
        c["verdict"] = pred.crop_fake[i] ? "fake" : "real";
        c["fusion_weights"] = {{"cdi", pred.crop_weights[i].first},
                               {"si", pred.crop_weights[i].second}};
        crops.push_back(c);
    }
    j["crops"] = crops;
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_train(const std::string& manifest, const TrainConfig& cfg_in, const std::string& stage,
              const std::string& lambda_str, const std::string& out_dir,
              const std::string& resume) {
    TrainConfig cfg = cfg_in;
    cfg.validate();
    const double lambda_opt = parse_lambda(lambda_str);

    auto entries = load_manifest(manifest);
    SplitResult split = split_dataset(entries, cfg.seed);
    ImageStore store(fs::path(manifest).parent_path().string());
    std::cerr << "[train] preparing " << split.train.size() << " train / " << split.val.size()
              << " val images\n";
    std::vector<CropSample> train_samples = prepare_samples(store, split.train);
    std::vector<CropSample> val_samples = prepare_samples(store, split.val);

    DetectorModel<float> model(cfg.preset, cfg.alpha, cfg.seed);
    TrainerSession session(model, cfg);
    TrainLog log;
    if (!resume.empty()) {
        session.restore(load_checkpoint_file(resume));
        std::cerr << "[train] resumed from " << resume << " (stage " << session.stage()
                  << ", epoch " << session.epochs_done() << ")\n";
    }

    if (stage == "2" && resume.empty())
        throw DataError("--stage 2 needs --resume with a stage-1 checkpoint");

    double lambda = session.stage() == 2 ? session.lambda() : 0.0;
    double final_ce = 0.0, final_mmd = 0.0;
    if (session.stage() == 1 && (stage == "1" || stage == "all")) {
        session.run_stage1(train_samples, val_samples, log);
        std::cerr << "[train] stage 1 done after " << session.epochs_done()
                  << " epochs, best val acc " << session.best_val_acc() << "%\n";
    }
    if (stage == "2" || stage == "all") {
        if (session.stage() == 1) {
            session.restore(session.best_checkpoint());
            lambda = lambda_opt;
            if (lambda < 0.0) {
                lambda = session.select_lambda(train_samples, val_samples, log);
                std::cerr << "[train] selected lambda " << lambda << "\n";
            }
            session.begin_stage2(lambda);
        } else {
            lambda = session.lambda();
        }
        Stage2Stats stats = session.run_stage2(train_samples, val_samples, log);
        final_ce = stats.final_epoch_ce;
        final_mmd = stats.final_epoch_mmd;
        std::cerr << "[train] stage 2 done after " << session.epochs_done() << " epochs\n";
    }

    fs::create_directories(out_dir);
    const std::string ckpt_path = (fs::path(out_dir) / "checkpoint.octf").string();
    save_checkpoint_file(ckpt_path, session.make_checkpoint());
    const std::string log_path = (fs::path(out_dir) / "training_log.csv").string();
    log.write_csv(log_path);

    json j;
    j["checkpoint"] = ckpt_path;
    j["log"] = log_path;
    j["stage"] = session.stage();
    j["epochs"] = session.epochs_done();
    j["lambda"] = lambda;
    j["best_val_acc"] = session.best_val_acc();
    j["final_ce"] = final_ce;
    j["final_mmd"] = final_mmd;
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_protocol(const std::string& spec_name, const std::string& manifest,
                 const TrainConfig& cfg, const std::string& lambda_str, int repeats,
                 const std::string& report_path, const std::string& out_dir) {
    ProtocolSpec spec = load_protocol_spec(spec_name);
    const double lambda = parse_lambda(lambda_str);
    std::vector<ProtocolReport> reports;
    for (int r = 0; r < repeats; ++r) {
        ProtocolOptions opt;
        opt.train = cfg;
        opt.train.seed = cfg.seed + uint64_t(r);
        opt.lambda = lambda;
        opt.manifest_path = manifest;
        if (!out_dir.empty()) {
            fs::create_directories(out_dir);
            opt.log_csv_path =
                (fs::path(out_dir) / ("training_log_seed" + std::to_string(opt.train.seed) + ".csv"))
                    .string();
            opt.checkpoint_path =
                (fs::path(out_dir) / ("checkpoint_seed" + std::to_string(opt.train.seed) + ".octf"))
                    .string();
        }
        std::cerr << "[protocol] " << spec.name << " seed " << opt.train.seed << " (" << (r + 1)
                  << "/" << repeats << ")\n";
        reports.push_back(run_protocol(spec, opt));
        std::cerr << "[protocol] seen " << reports.back().seen_acc << "% unseen "
                  << reports.back().unseen_acc << "%\n";
    }
    json j = repeats == 1 ? reports.front().to_json() : aggregate_reports(reports);
    if (!report_path.empty()) {
        std::ofstream f(report_path);
        if (!f) throw DataError("cannot write report: " + report_path);
        f << j.dump(2) << "\n";
    }
    std::cout << j.dump(2) << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"octforge: generalized fake-face detection pipeline"};
    app.require_subcommand(1);
    app.fallthrough(); // lets --config appear after the subcommand name
    app.set_config("--config", "",
                   "key-value config file; subcommand settings live in [subcommand] sections");
    app.allow_config_extras(CLI::config_extras_mode::error);

    // synth
    auto* synth_cmd = app.add_subcommand("synth", "generate the synthetic corpus");
    std::string synth_out;
    int synth_count = 10;
    uint64_t synth_seed = 0;
    std::vector<std::string> synth_families;
    synth_cmd->add_option("--out", synth_out, "output directory")->required();
    synth_cmd->add_option("--count", synth_count, "images per class per family")
        ->check(CLI::PositiveNumber);
    synth_cmd->add_option("--seed", synth_seed, "corpus seed")->required();
    synth_cmd->add_option("--families", synth_families,
                          "fake families (default: nearest bilinear checkerboard)");

    // inspect
    auto* inspect_cmd = app.add_subcommand("inspect", "dump CDI/SI and HF statistics");
    std::string inspect_image, inspect_dump_cdi, inspect_dump_si;
    inspect_cmd->add_option("image", inspect_image, "input PNG")->required();
    inspect_cmd->add_option("--dump-cdi", inspect_dump_cdi, "write CDI debug PNG here");
    inspect_cmd->add_option("--dump-si", inspect_dump_si, "write SI debug PNG here");

    // train
    auto* train_cmd = app.add_subcommand("train", "run the two-stage training procedure");
    TrainConfig train_cfg;
    std::string train_manifest, train_stage = "all", train_lambda = "auto", train_out = "runs",
                train_resume;
    train_cmd->add_option("--manifest", train_manifest, "corpus manifest CSV")->required();
    train_cmd->add_option("--seed", train_cfg.seed, "training seed")->required();
    train_cmd->add_option("--stage", train_stage, "1, 2 or all")
        ->check(CLI::IsMember({"1", "2", "all"}));
    train_cmd->add_option("--lambda", train_lambda, "alignment weight or 'auto'");
    train_cmd->add_option("--out-dir", train_out, "output directory");
    train_cmd->add_option("--resume", train_resume, "checkpoint to resume from");
    add_train_options(train_cmd, train_cfg);

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "classify one image");
    std::string eval_image, eval_ckpt;
    eval_cmd->add_option("--image", eval_image, "input PNG")->required();
    eval_cmd->add_option("--checkpoint", eval_ckpt, "trained checkpoint")->required();

    // protocol
    auto* proto_cmd = app.add_subcommand("protocol", "run a cross-manipulation protocol");
    TrainConfig proto_cfg;
    std::string proto_spec, proto_manifest, proto_lambda = "auto", proto_report, proto_out;
    int proto_repeats = 1;
    proto_cmd->add_option("--spec", proto_spec, "builtin name or JSON spec file")->required();
    proto_cmd->add_option("--manifest", proto_manifest, "corpus manifest CSV")->required();
    proto_cmd->add_option("--seed", proto_cfg.seed, "base seed")->required();
    proto_cmd->add_option("--lambda", proto_lambda, "alignment weight or 'auto'");
    proto_cmd->add_option("--repeats", proto_repeats, "number of seeded repetitions")
        ->check(CLI::PositiveNumber);
    proto_cmd->add_option("--report", proto_report, "write the JSON report here");
    proto_cmd->add_option("--out-dir", proto_out, "directory for logs/checkpoints");
    add_train_options(proto_cmd, proto_cfg);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (synth_cmd->parsed()) {
            log_resolved_config(synth_cmd);
            return cmd_synth(synth_out, synth_count, synth_seed, synth_families);
        }
        if (inspect_cmd->parsed())
            return cmd_inspect(inspect_image, inspect_dump_cdi, inspect_dump_si);
        if (train_cmd->parsed()) {
            log_resolved_config(train_cmd);
            return cmd_train(train_manifest, train_cfg, train_stage, train_lambda, train_out,
                             train_resume);
        }
        if (eval_cmd->parsed()) return cmd_eval(eval_image, eval_ckpt);
        if (proto_cmd->parsed()) {
            log_resolved_config(proto_cmd);
            return cmd_protocol(proto_spec, proto_manifest, proto_cfg, proto_lambda,
                                proto_repeats, proto_report, proto_out);
        }
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
