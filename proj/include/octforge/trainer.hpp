#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "octforge/checkpoint.hpp"
#include "octforge/dataset.hpp"
#include "octforge/model.hpp"
#include "octforge/optimizer.hpp"

namespace octforge {

struct TrainConfig {
    int stage1_batch = 10;
    int stage2_domain_batch = 16; // per-domain sub-batch (100 at paper scale)
    double lr_stage1 = 1e-3;
    double lr_stage2 = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double plateau_threshold = 0.1; // percentage points
    int plateau_patience = 5;
    double lr_floor = 1e-7;
    std::vector<double> lambda_grid = {0.001, 0.01, 0.1, 1.0, 10.0};
    int probe_epochs = 5;
    int stage1_max_epochs = 40; // desk caps; the plateau rule may stop earlier
    int stage2_max_epochs = 12;
    uint64_t seed = 0;
    std::string preset = "desk-10";
    double alpha = 0.25;

    void validate() const {
        check(stage1_batch >= 1 && stage2_domain_batch >= 1, "batch sizes must be positive");
        check(lr_stage1 > 0 && lr_stage2 > 0 && lr_floor > 0, "learning rates must be positive");
        check(plateau_patience >= 1 && plateau_threshold >= 0, "bad plateau settings");
        check(!lambda_grid.empty(), "lambda grid must be non-empty");
        check(probe_epochs >= 1 && stage1_max_epochs >= 1 && stage2_max_epochs >= 1,
              "epoch counts must be positive");
        check(alpha >= 0.0 && alpha < 1.0, "alpha must be in [0,1)");
    }
};

struct TrainLogRow {
    int64_t step = 0;
    int epoch = 0;
    int stage = 0;
    double lr = 0, ce = 0, cda = 0, lambda = 0, total = 0;
    double val_acc = 0;
    bool has_val = false;
};

class TrainLog {
public:
    void add(TrainLogRow row) { rows_.push_back(row); }
    const std::vector<TrainLogRow>& rows() const { return rows_; }

    void write_csv(const std::string& path) const {
        std::ofstream f(path);
        if (!f) throw DataError("cannot write training log: " + path);
        f << "step,epoch,stage,lr,ce,cda,lambda,total,val_acc\n";
        f.precision(10);
        for (const auto& r : rows_) {
            f << r.step << "," << r.epoch << "," << r.stage << "," << r.lr << "," << r.ce << ","
              << r.cda << "," << r.lambda << "," << r.total << ",";
            if (r.has_val) f << r.val_acc;
            f << "\n";
        }
    }

    // mean of a column over one (stage, epoch)
    double epoch_mean(int stage, int epoch, double TrainLogRow::* field) const {
        double sum = 0;
        int n = 0;
        for (const auto& r : rows_)
            if (r.stage == stage && r.epoch == epoch && !r.has_val) {
                sum += r.*field;
                ++n;
            }
        check(n > 0, "no log rows for requested epoch");
        return sum / n;
    }

private:
    std::vector<TrainLogRow> rows_;
};

// Per-crop accuracy (percent) in eval mode.
inline double crop_accuracy(DetectorModel<float>& model, const std::vector<CropSample>& samples,
                            int batch_size = 64) {
    check(!samples.empty(), "crop_accuracy: empty sample set");
    int64_t correct = 0;
    for (size_t start = 0; start < samples.size(); start += size_t(batch_size)) {
        const size_t end = std::min(samples.size(), start + size_t(batch_size));
        std::vector<const CropSample*> batch;
        for (size_t i = start; i < end; ++i) batch.push_back(&samples[i]);
        Tape<float> tape;
        int cdi = tape.input(stack_cdi(batch));
        int si = tape.input(stack_si(batch));
        auto out = model.forward(tape, cdi, si, /*training=*/false);
        const Tensor<float>& logits = tape.val(out.logits);
        for (size_t i = 0; i < batch.size(); ++i) {
            const int pred = logits[int64_t(i) * 2] >= logits[int64_t(i) * 2 + 1] ? 0 : 1;
            if (pred == batch[i]->label) ++correct;
        }
    }
    return 100.0 * double(correct) / double(samples.size());
}

struct Stage2Stats {
    double final_epoch_ce = 0;
    double final_epoch_mmd = 0;
    int epochs_run = 0;
    double mean_weight_cdi = 0; // mean fusion weights over the final epoch
    double mean_weight_si = 0;
};

// The balance rule: pick the lambda whose end-of-probe |CE - lambda*MMD| is
// smallest; ties go to the smaller lambda. `probes` holds (ce, mmd) per grid
// entry, in grid order.
inline double select_lambda_by_balance(const std::vector<double>& grid,
                                       const std::vector<std::pair<double, double>>& probes) {
    check(!grid.empty() && grid.size() == probes.size(), "lambda grid/probe size mismatch");
    std::vector<size_t> order(grid.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return grid[a] < grid[b]; });
    double best_lambda = grid[order[0]];
    double best_score = -1.0;
    for (size_t i : order) {
        const double score = std::abs(probes[i].first - grid[i] * probes[i].second);
        if (best_score < 0.0 || score < best_score) {
            best_score = score;
            best_lambda = grid[i];
        }
    }
    return best_lambda;
}

// Drives both training stages with bit-reproducible batch order, owns the
// optimizer/scheduler state, and freezes it into checkpoints.
class TrainerSession {
public:
    TrainerSession(DetectorModel<float>& model, TrainConfig cfg)
        : model_(model), cfg_(std::move(cfg)), sched_(cfg_.lr_stage1, cfg_.plateau_threshold,
                                                      cfg_.plateau_patience, cfg_.lr_floor) {
        cfg_.validate();
        model_.set_stage(1);
        opt_ = Adam<float>(model_.store(), float(cfg_.beta1), float(cfg_.beta2));
    }

    const TrainConfig& config() const { return cfg_; }
    int stage() const { return stage_; }
    int epochs_done() const { return epoch_; }
    double lambda() const { return lambda_; }
    double best_val_acc() const { return best_val_acc_; }
    const CheckpointData& best_checkpoint() const {
        check(have_best_ckpt_, "no best checkpoint recorded yet");
        return best_ckpt_;
    }

    // ------------------------------------------------------------ stage 1 --

    void run_stage1(const std::vector<CropSample>& train, const std::vector<CropSample>& val,
                    TrainLog& log) {
        check(stage_ == 1, "stage 1 already finished");
        check(!train.empty() && !val.empty(), "train/val splits must be non-empty");
        while (epoch_ < cfg_.stage1_max_epochs && !sched_.stopped()) {
            const int epoch = ++epoch_;
            run_stage1_epoch(train, epoch, log);
            const double acc = crop_accuracy(model_, val);
            auto upd = sched_.observe(acc);
            TrainLogRow row;
            row.step = global_step_;
            row.epoch = epoch;
            row.stage = 1;
            row.lr = upd.lr;
            row.val_acc = acc;
            row.has_val = true;
            log.add(row);
            if (!have_best_ckpt_ || acc > best_val_acc_) {
                best_val_acc_ = acc;
                have_best_ckpt_ = true;
                best_ckpt_ = make_checkpoint();
            }
            if (upd.stop) break;
        }
    }

    // ------------------------------------------------------------ stage 2 --

    void begin_stage2(double lambda) {
        check(lambda >= 0.0, "lambda must be non-negative");
        stage_ = 2;
        epoch_ = 0;
        lambda_ = lambda;
        model_.set_stage(2);
        opt_ = Adam<float>(model_.store(), float(cfg_.beta1), float(cfg_.beta2));
        sched_ = PlateauScheduler(cfg_.lr_stage2, cfg_.plateau_threshold, cfg_.plateau_patience,
                                  cfg_.lr_floor);
        frozen_hash_ = hash_frozen_params();
    }

    Stage2Stats run_stage2(const std::vector<CropSample>& train,
                           const std::vector<CropSample>& val, TrainLog& log,
                           int max_epochs_override = 0) {
        check(stage_ == 2, "begin_stage2 must run first");
        auto pools = build_domain_pools(train);
        const int max_epochs = max_epochs_override > 0 ? max_epochs_override
                                                       : cfg_.stage2_max_epochs;
        Stage2Stats stats;
        while (epoch_ < max_epochs && !sched_.stopped()) {
            const int epoch = ++epoch_;
            stats = run_stage2_epoch(train, pools, epoch, log);
            stats.epochs_run = epoch;
            const double acc = crop_accuracy(model_, val);
            auto upd = sched_.observe(acc);
            TrainLogRow row;
            row.step = global_step_;
            row.epoch = epoch;
            row.stage = 2;
            row.lr = upd.lr;
            row.lambda = lambda_;
            row.val_acc = acc;
            row.has_val = true;
            log.add(row);
            check(hash_frozen_params() == frozen_hash_,
                  "frozen parameters changed during stage 2");
            if (upd.stop) break;
        }
        return stats;
    }

    // Grid probe: short stage-2 run per candidate, pick the lambda whose
    // end-of-probe |CE - lambda*MMD| is smallest; ties go to the smaller
    // lambda. Model/optimizer state is restored after each probe.
    double select_lambda(const std::vector<CropSample>& train, const std::vector<CropSample>& val,
                         TrainLog& log) {
        std::vector<double> grid = cfg_.lambda_grid;
        std::sort(grid.begin(), grid.end());
        const CheckpointData snapshot = make_checkpoint();
        std::vector<std::pair<double, double>> probes;
        for (double lam : grid) {
            begin_stage2(lam);
            Stage2Stats st = run_stage2(train, val, log, cfg_.probe_epochs);
            probes.emplace_back(st.final_epoch_ce, st.final_epoch_mmd);
            restore(snapshot);
        }
        return select_lambda_by_balance(grid, probes);
    }

    // --------------------------------------------------------- persistence --

    CheckpointData make_checkpoint() const {
        CheckpointData ckpt = model_.snapshot_tensors();
        const auto& params = model_.store().params();
        const auto& slots = opt_.slots();
        for (size_t i = 0; i < params.size(); ++i) {
            ckpt.add("__opt/m/" + params[i].name, slots[i].m.cast<float>());
            ckpt.add("__opt/v/" + params[i].name, slots[i].v.cast<float>());
        }
        ckpt.add("__opt/steps", encode_u64(uint64_t(opt_.steps())));
        ckpt.add("__meta/preset", Tensor<float>::scalar(cfg_.preset == "desk-10" ? 0.f : 1.f));
        ckpt.add("__meta/alpha", Tensor<float>::scalar(float(cfg_.alpha)));
        ckpt.add("__meta/seed", encode_u64(cfg_.seed));
        ckpt.add("__meta/stage", Tensor<float>::scalar(float(stage_)));
        ckpt.add("__meta/epoch", Tensor<float>::scalar(float(epoch_)));
        ckpt.add("__meta/step", encode_u64(uint64_t(global_step_)));
        ckpt.add("__meta/lambda", Tensor<float>::scalar(float(lambda_)));
        ckpt.add("__meta/sched_has_best", Tensor<float>::scalar(sched_.has_best() ? 1.f : 0.f));
        ckpt.add("__meta/sched_best", encode_u64(bits_of(sched_.best())));
        ckpt.add("__meta/sched_stale", Tensor<float>::scalar(float(sched_.stale())));
        ckpt.add("__meta/sched_drops", Tensor<float>::scalar(float(sched_.drops())));
        ckpt.add("__meta/sched_stopped", Tensor<float>::scalar(sched_.stopped() ? 1.f : 0.f));
        ckpt.add("__meta/best_val_acc", encode_u64(bits_of(best_val_acc_)));
        ckpt.add("__meta/have_best", Tensor<float>::scalar(have_best_ckpt_ ? 1.f : 0.f));
        return ckpt;
    }

    void restore(const CheckpointData& ckpt) {
        model_.restore_tensors(ckpt);
        stage_ = int(ckpt.at("__meta/stage")[0]);
        epoch_ = int(ckpt.at("__meta/epoch")[0]);
        global_step_ = int64_t(decode_u64(ckpt.at("__meta/step")));
        lambda_ = double(ckpt.at("__meta/lambda")[0]);
        model_.set_stage(stage_);
        opt_ = Adam<float>(model_.store(), float(cfg_.beta1), float(cfg_.beta2));
        auto& slots = opt_.slots();
        const auto& params = model_.store().params();
        for (size_t i = 0; i < params.size(); ++i) {
            slots[i].m = ckpt.at("__opt/m/" + params[i].name).cast<float>();
            slots[i].v = ckpt.at("__opt/v/" + params[i].name).cast<float>();
        }
        opt_.set_steps(int64_t(decode_u64(ckpt.at("__opt/steps"))));
        sched_ = PlateauScheduler(stage_ == 1 ? cfg_.lr_stage1 : cfg_.lr_stage2,
                                  cfg_.plateau_threshold, cfg_.plateau_patience, cfg_.lr_floor);
        sched_.restore(ckpt.at("__meta/sched_has_best")[0] != 0.f,
                       double_of(decode_u64(ckpt.at("__meta/sched_best"))),
                       int(ckpt.at("__meta/sched_stale")[0]),
                       int(ckpt.at("__meta/sched_drops")[0]),
                       ckpt.at("__meta/sched_stopped")[0] != 0.f);
        best_val_acc_ = double_of(decode_u64(ckpt.at("__meta/best_val_acc")));
        have_best_ckpt_ = ckpt.at("__meta/have_best")[0] != 0.f;
        if (have_best_ckpt_) {
            best_ckpt_ = ckpt; // resume keeps the restored state as its best reference
        }
        if (stage_ == 2) frozen_hash_ = hash_frozen_params();
    }

private:
    static uint64_t bits_of(double v) {
        uint64_t b;
        std::memcpy(&b, &v, 8);
        return b;
    }
    static double double_of(uint64_t b) {
        double v;
        std::memcpy(&v, &b, 8);
        return v;
    }

    void run_stage1_epoch(const std::vector<CropSample>& train, int epoch, TrainLog& log) {
        std::vector<size_t> order(train.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng rng(mix_seed(cfg_.seed, mix_seed(0x51A6E1, uint64_t(epoch))));
        for (size_t i = order.size() - 1; i > 0; --i)
            std::swap(order[i], order[size_t(rng.below(uint64_t(i + 1)))]);

        for (size_t start = 0; start < order.size(); start += size_t(cfg_.stage1_batch)) {
            const size_t end = std::min(order.size(), start + size_t(cfg_.stage1_batch));
            std::vector<const CropSample*> batch;
            std::vector<int> labels;
            for (size_t i = start; i < end; ++i) {
                batch.push_back(&train[order[i]]);
                labels.push_back(train[order[i]].label);
            }
            Tape<float> tape;
            int cdi = tape.input(stack_cdi(batch));
            int si = tape.input(stack_si(batch));
            auto out = model_.forward(tape, cdi, si, /*training=*/true);
            int ce = tape.softmax_cross_entropy(out.logits, labels);
            model_.store().zero_grads();
            tape.backward(ce);
            opt_.step(model_.store(), float(sched_.lr()));
            ++global_step_;

            TrainLogRow row;
            row.step = global_step_;
            row.epoch = epoch;
            row.stage = 1;
            row.lr = sched_.lr();
            row.ce = double(tape.val(ce)[0]);
            row.total = row.ce;
            log.add(row);
        }
    }

    struct DomainPool {
        std::string name;
        std::vector<size_t> samples;
    };

    // Fakes group by manipulation family; reals are dealt round-robin across
    // the fake domains (seeded) so every domain batch carries both classes.
    std::vector<DomainPool> build_domain_pools(const std::vector<CropSample>& train) const {
        std::map<std::string, std::vector<size_t>> fake_pools;
        std::vector<size_t> reals;
        for (size_t i = 0; i < train.size(); ++i) {
            if (train[i].label == 1)
                fake_pools[train[i].domain].push_back(i);
            else
                reals.push_back(i);
        }
        check(fake_pools.size() >= 2, "stage 2 needs at least 2 fake domains, got " +
                                          std::to_string(fake_pools.size()));
        std::vector<DomainPool> pools;
        for (auto& [name, idx] : fake_pools) pools.push_back({name, std::move(idx)});
        Rng rng(mix_seed(cfg_.seed, 0xD0A11));
        for (size_t i = reals.size(); i > 1; --i)
            std::swap(reals[i - 1], reals[size_t(rng.below(uint64_t(i)))]);
        for (size_t i = 0; i < reals.size(); ++i)
            pools[i % pools.size()].samples.push_back(reals[i]);
        return pools;
    }

    Stage2Stats run_stage2_epoch(const std::vector<CropSample>& train,
                                 const std::vector<DomainPool>& pools, int epoch, TrainLog& log) {
        size_t largest = 0;
        for (const auto& p : pools) largest = std::max(largest, p.samples.size());
        const size_t steps =
            (largest + size_t(cfg_.stage2_domain_batch) - 1) / size_t(cfg_.stage2_domain_batch);

        // per-domain epoch orders, cycled when a pool is smaller than the epoch
        std::vector<std::vector<size_t>> orders(pools.size());
        for (size_t d = 0; d < pools.size(); ++d) {
            orders[d] = pools[d].samples;
            Rng rng(mix_seed(cfg_.seed, mix_seed(0x51A6E2, uint64_t(epoch) * 131 + d)));
            for (size_t i = orders[d].size(); i > 1; --i)
                std::swap(orders[d][i - 1], orders[d][size_t(rng.below(uint64_t(i)))]);
        }

        Stage2Stats stats;
        double sum_ce = 0, sum_mmd = 0, sum_wc = 0, sum_ws = 0;
        int64_t weight_rows = 0;
        for (size_t step = 0; step < steps; ++step) {
            std::vector<const CropSample*> batch;
            std::vector<int> labels;
            std::vector<kernels::DomainRange> ranges;
            for (size_t d = 0; d < pools.size(); ++d) {
                const int start_row = int(batch.size());
                for (int i = 0; i < cfg_.stage2_domain_batch; ++i) {
                    const size_t pos = (step * size_t(cfg_.stage2_domain_batch) + size_t(i)) %
                                       orders[d].size();
                    batch.push_back(&train[orders[d][pos]]);
                    labels.push_back(train[orders[d][pos]].label);
                }
                ranges.push_back({start_row, cfg_.stage2_domain_batch});
            }
            Tape<float> tape;
            int cdi = tape.input(stack_cdi(batch));
            int si = tape.input(stack_si(batch));
            auto out = model_.forward(tape, cdi, si, /*training=*/true);
            int ce = tape.softmax_cross_entropy(out.logits, labels);
            int cda = tape.mmd(out.penultimate, ranges);
            int total = tape.add_scaled(ce, cda, float(lambda_));
            model_.store().zero_grads();
            tape.backward(total);
            opt_.step(model_.store(), float(sched_.lr()));
            ++global_step_;

            TrainLogRow row;
            row.step = global_step_;
            row.epoch = epoch;
            row.stage = 2;
            row.lr = sched_.lr();
            row.ce = double(tape.val(ce)[0]);
            row.cda = double(tape.val(cda)[0]);
            row.lambda = lambda_;
            row.total = double(tape.val(total)[0]);
            log.add(row);
            sum_ce += row.ce;
            sum_mmd += row.cda;
            for (int i = 0; i < out.fusion_weights.dim(0); ++i) {
                sum_wc += double(out.fusion_weights[int64_t(i) * 2]);
                sum_ws += double(out.fusion_weights[int64_t(i) * 2 + 1]);
                ++weight_rows;
            }
        }
        stats.final_epoch_ce = sum_ce / double(steps);
        stats.final_epoch_mmd = sum_mmd / double(steps);
        stats.mean_weight_cdi = sum_wc / double(weight_rows);
        stats.mean_weight_si = sum_ws / double(weight_rows);
        return stats;
    }

    uint64_t hash_frozen_params() const {
        uint64_t h = 1469598103934665603ULL; // FNV-1a
        for (const auto& p : model_.store().params()) {
            if (p.trainable) continue;
            const uint8_t* bytes = reinterpret_cast<const uint8_t*>(p.value.data());
            for (size_t i = 0; i < size_t(p.value.numel()) * sizeof(float); ++i) {
                h ^= bytes[i];
                h *= 1099511628211ULL;
            }
        }
        return h;
    }

    DetectorModel<float>& model_;
    TrainConfig cfg_;
    Adam<float> opt_;
    PlateauScheduler sched_;
    int stage_ = 1;
    int epoch_ = 0;
    int64_t global_step_ = 0;
    double lambda_ = 0.0;
    double best_val_acc_ = 0.0;
    bool have_best_ckpt_ = false;
    CheckpointData best_ckpt_;
    uint64_t frozen_hash_ = 0;
};

} // namespace octforge
