#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "octforge/dataset.hpp"
#include "octforge/model.hpp"
#include "octforge/trainer.hpp"

namespace octforge {

// Train on K manipulation domains, hold one out for the generalization test.
struct ProtocolSpec {
    std::string name;
    std::vector<std::string> train_domains;
    std::string test_domain;

    void validate() const {
        check(train_domains.size() >= 2, "protocol needs at least 2 training domains");
        for (const auto& d : train_domains)
            check(d != test_domain, "protocol: test domain '" + test_domain +
                                        "' must not appear in the training domains");
    }
};

inline ProtocolSpec builtin_protocol(const std::string& name) {
    if (name == "n1-synth") return {"n1-synth", {"nearest", "bilinear"}, "checkerboard"};
    if (name == "n2-synth") return {"n2-synth", {"nearest", "checkerboard"}, "bilinear"};
    if (name == "n3-synth") return {"n3-synth", {"bilinear", "checkerboard"}, "nearest"};
    throw DataError("unknown builtin protocol: " + name +
                    " (expected n1-synth, n2-synth or n3-synth)");
}

// Accepts a builtin name or a JSON file {name, train_domains, test_domain}.
inline ProtocolSpec load_protocol_spec(const std::string& name_or_path) {
    if (name_or_path == "n1-synth" || name_or_path == "n2-synth" || name_or_path == "n3-synth")
        return builtin_protocol(name_or_path);
    std::ifstream f(name_or_path);
    if (!f) throw DataError("protocol spec is neither a builtin name nor a readable file: " +
                            name_or_path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("cannot parse protocol spec " + name_or_path + ": " + e.what());
    }
    ProtocolSpec spec;
    try {
        spec.name = j.at("name").get<std::string>();
        spec.train_domains = j.at("train_domains").get<std::vector<std::string>>();
        spec.test_domain = j.at("test_domain").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError("protocol spec " + name_or_path + " missing fields: " + e.what());
    }
    spec.validate();
    return spec;
}

// ------------------------------------------------------------- metrics -----

struct Metrics {
    double accuracy = 0; // percent
    int64_t tp = 0, tn = 0, fp = 0, fn = 0; // fake is the positive class
};

inline Metrics compute_metrics(const std::vector<int>& verdicts, const std::vector<int>& truths) {
    check(verdicts.size() == truths.size(), "compute_metrics: length mismatch, " +
                                                std::to_string(verdicts.size()) + " verdicts vs " +
                                                std::to_string(truths.size()) + " truths");
    check(!verdicts.empty(), "compute_metrics: empty input");
    Metrics m;
    for (size_t i = 0; i < verdicts.size(); ++i) {
        const bool pred_fake = verdicts[i] == 1, is_fake = truths[i] == 1;
        if (pred_fake && is_fake)
            ++m.tp;
        else if (!pred_fake && !is_fake)
            ++m.tn;
        else if (pred_fake && !is_fake)
            ++m.fp;
        else
            ++m.fn;
    }
    m.accuracy = 100.0 * double(m.tp + m.tn) / double(verdicts.size());
    return m;
}

// ------------------------------------------------------ per-image rule -----

// An image is fake as soon as any of its crops is judged fake.
inline bool any_crop_fake(const std::vector<bool>& crop_verdicts) {
    for (bool v : crop_verdicts)
        if (v) return true;
    return false;
}

struct ImagePrediction {
    bool fake = false;
    std::vector<bool> crop_fake;
    std::vector<std::pair<double, double>> crop_weights; // (w_cdi, w_si) per crop
};

inline ImagePrediction predict_image(const RgbImage& img, DetectorModel<float>& model) {
    auto [grid, crops] = crop_parts(img);
    (void)grid;
    std::vector<CropSample> samples;
    for (const RgbImage& crop : crops) {
        CropSample s;
        s.cdi = compute_cdi(crop).data;
        s.si = compute_si(crop).data;
        samples.push_back(std::move(s));
    }
    std::vector<const CropSample*> batch;
    for (const auto& s : samples) batch.push_back(&s);
    Tape<float> tape;
    int cdi = tape.input(stack_cdi(batch));
    int si = tape.input(stack_si(batch));
    auto out = model.forward(tape, cdi, si, /*training=*/false);
    const Tensor<float>& logits = tape.val(out.logits);
    ImagePrediction pred;
    for (size_t i = 0; i < batch.size(); ++i) {
        pred.crop_fake.push_back(logits[int64_t(i) * 2 + 1] > logits[int64_t(i) * 2]);
        pred.crop_weights.emplace_back(double(out.fusion_weights[int64_t(i) * 2]),
                                       double(out.fusion_weights[int64_t(i) * 2 + 1]));
    }
    pred.fake = any_crop_fake(pred.crop_fake);
    return pred;
}

// ------------------------------------------------------------ protocol -----

struct ProtocolOptions {
    TrainConfig train;
    double lambda = -1.0; // < 0 selects from the grid
    std::string manifest_path;
    std::string log_csv_path;    // optional
    std::string checkpoint_path; // optional, final model
};

struct ProtocolReport {
    std::string protocol;
    uint64_t seed = 0;
    double lambda = 0;
    double seen_acc = 0, unseen_acc = 0;           // per-image, percent
    double seen_acc_crop = 0, unseen_acc_crop = 0; // per-crop, percent
    std::map<std::string, double> per_domain;      // per-image accuracy by domain
    double mean_weight_cdi = 0, mean_weight_si = 0;
    double final_ce = 0, final_mmd = 0; // training means over the final stage-2 epoch
    int stage1_epochs = 0, stage2_epochs = 0;
    bool audit_clean = false;
    std::vector<std::string> train_phase_reads;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["protocol"] = protocol;
        j["seed"] = seed;
        j["lambda"] = lambda;
        j["seen_acc"] = seen_acc;
        j["unseen_acc"] = unseen_acc;
        j["seen_acc_crop"] = seen_acc_crop;
        j["unseen_acc_crop"] = unseen_acc_crop;
        j["per_domain"] = per_domain;
        j["mean_fusion_weights"] = {{"cdi", mean_weight_cdi}, {"si", mean_weight_si}};
        j["final_ce"] = final_ce;
        j["final_mmd"] = final_mmd;
        j["stage1_epochs"] = stage1_epochs;
        j["stage2_epochs"] = stage2_epochs;
        j["audit_clean"] = audit_clean;
        return j;
    }
};

inline ProtocolReport run_protocol(const ProtocolSpec& spec, const ProtocolOptions& opt) {
    namespace fs = std::filesystem;
    spec.validate();
    opt.train.validate();
    const auto entries = load_manifest(opt.manifest_path);

    std::set<std::string> present;
    for (const auto& e : entries) present.insert(e.domain);
    for (const auto& d : spec.train_domains)
        if (!present.count(d)) throw DataError("manifest has no domain '" + d + "'");
    if (!present.count(spec.test_domain))
        throw DataError("manifest has no domain '" + spec.test_domain + "'");

    std::map<std::string, std::string> domain_of; // path -> domain
    std::vector<ManifestEntry> train_side, heldout_side;
    const std::set<std::string> train_set(spec.train_domains.begin(), spec.train_domains.end());
    for (const auto& e : entries) {
        domain_of[e.path] = e.domain;
        if (e.domain == spec.test_domain)
            heldout_side.push_back(e); // nothing from the held-out domain trains
        else if (train_set.count(e.domain) || e.label == 0)
            train_side.push_back(e);
    }

    SplitResult split = split_dataset(train_side, opt.train.seed);
    SplitResult heldout = split_dataset(heldout_side, opt.train.seed);

    ImageStore store(fs::path(opt.manifest_path).parent_path().string());
    std::vector<CropSample> train_samples = prepare_samples(store, split.train);
    std::vector<CropSample> val_samples = prepare_samples(store, split.val);

    DetectorModel<float> model(opt.train.preset, opt.train.alpha, opt.train.seed);
    TrainerSession session(model, opt.train);
    TrainLog log;
    session.run_stage1(train_samples, val_samples, log);
    const int stage1_epochs = session.epochs_done();
    session.restore(session.best_checkpoint());
    double lambda = opt.lambda;
    if (lambda < 0.0) lambda = session.select_lambda(train_samples, val_samples, log);
    session.begin_stage2(lambda);
    Stage2Stats stats = session.run_stage2(train_samples, val_samples, log);

    // audit snapshot: everything read so far belongs to the training phase
    std::set<std::string> reads(store.read_log().begin(), store.read_log().end());
    bool audit_clean = true;
    for (const auto& p : reads)
        if (domain_of.count(p) && domain_of[p] == spec.test_domain) audit_clean = false;

    ProtocolReport report;
    report.protocol = spec.name;
    report.seed = opt.train.seed;
    report.lambda = lambda;
    report.final_ce = stats.final_epoch_ce;
    report.final_mmd = stats.final_epoch_mmd;
    report.stage1_epochs = stage1_epochs;
    report.stage2_epochs = session.epochs_done();
    report.audit_clean = audit_clean;
    report.train_phase_reads.assign(reads.begin(), reads.end());

    // evaluation: seen-domain test split, plus the held-out domain's test
    // split paired with the camera test split
    int64_t weight_rows = 0;
    auto evaluate = [&](const std::vector<ManifestEntry>& set, double& image_acc,
                        double& crop_acc, std::map<std::string, std::pair<int64_t, int64_t>>&
                                                per_domain_counts) {
        std::vector<int> img_verdicts, img_truths;
        int64_t crop_correct = 0, crop_total = 0;
        for (const auto& e : set) {
            ImagePrediction pred = predict_image(store.get(e.path), model);
            img_verdicts.push_back(pred.fake ? 1 : 0);
            img_truths.push_back(e.label);
            for (bool cf : pred.crop_fake) {
                crop_total += 1;
                if (int(cf) == e.label) ++crop_correct;
            }
            for (auto [wc, ws] : pred.crop_weights) {
                report.mean_weight_cdi += wc;
                report.mean_weight_si += ws;
                ++weight_rows;
            }
            auto& pc = per_domain_counts[e.domain];
            pc.second += 1;
            if ((pred.fake ? 1 : 0) == e.label) pc.first += 1;
        }
        image_acc = compute_metrics(img_verdicts, img_truths).accuracy;
        crop_acc = 100.0 * double(crop_correct) / double(crop_total);
    };

    std::map<std::string, std::pair<int64_t, int64_t>> domain_counts;
    evaluate(split.test, report.seen_acc, report.seen_acc_crop, domain_counts);
    std::vector<ManifestEntry> unseen_set = heldout.test;
    for (const auto& e : split.test)
        if (e.label == 0) unseen_set.push_back(e); // pair held-out fakes with real test images
    evaluate(unseen_set, report.unseen_acc, report.unseen_acc_crop, domain_counts);
    for (const auto& [d, counts] : domain_counts)
        report.per_domain[d] = 100.0 * double(counts.first) / double(counts.second);
    if (weight_rows > 0) {
        report.mean_weight_cdi /= double(weight_rows);
        report.mean_weight_si /= double(weight_rows);
    }

    if (!opt.log_csv_path.empty()) log.write_csv(opt.log_csv_path);
    if (!opt.checkpoint_path.empty())
        save_checkpoint_file(opt.checkpoint_path, session.make_checkpoint());
    return report;
}

// Aggregates repeated runs (the 5-experiment averaging rule) into one report.
inline nlohmann::json aggregate_reports(const std::vector<ProtocolReport>& reports) {
    check(!reports.empty(), "aggregate_reports: empty");
    nlohmann::json j;
    j["protocol"] = reports.front().protocol;
    j["seed"] = reports.front().seed;
    j["repeats"] = reports.size();
    auto mean = [&](auto field) {
        double s = 0;
        for (const auto& r : reports) s += r.*field;
        return s / double(reports.size());
    };
    j["lambda"] = mean(&ProtocolReport::lambda);
    j["seen_acc"] = mean(&ProtocolReport::seen_acc);
    j["unseen_acc"] = mean(&ProtocolReport::unseen_acc);
    j["seen_acc_crop"] = mean(&ProtocolReport::seen_acc_crop);
    j["unseen_acc_crop"] = mean(&ProtocolReport::unseen_acc_crop);
    j["final_ce"] = mean(&ProtocolReport::final_ce);
    j["final_mmd"] = mean(&ProtocolReport::final_mmd);
    j["mean_fusion_weights"] = {{"cdi", mean(&ProtocolReport::mean_weight_cdi)},
                                {"si", mean(&ProtocolReport::mean_weight_si)}};
    std::map<std::string, double> per_domain;
    for (const auto& r : reports)
        for (const auto& [d, acc] : r.per_domain) per_domain[d] += acc / double(reports.size());
    j["per_domain"] = per_domain;
    bool audit = true;
    for (const auto& r : reports) audit = audit && r.audit_clean;
    j["audit_clean"] = audit;
    nlohmann::json seeds = nlohmann::json::array();
    for (const auto& r : reports) seeds.push_back(r.to_json());
    j["per_seed"] = seeds;
    return j;
}

} // namespace octforge
