// Acceptance suite: one PASS/FAIL line per criterion, exit 0 iff all pass.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "fcbswin/augment.hpp"
#include "fcbswin/datakit.hpp"
#include "fcbswin/evalkit.hpp"
#include "fcbswin/gradcheck.hpp"
#include "fcbswin/trainer.hpp"

using namespace fcbswin;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(const std::string& name, bool ok, const std::string& detail) {
    std::printf("%s  %-28s %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
    if (!ok) g_failures++;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- 1: shape contract (first: it is the memory-heavy one) ----

void shape_contract() {
    auto t0 = std::chrono::steady_clock::now();
    ModelConfig cfg;  // full-scale defaults
    ParamStore<float> store;
    init_model_params(store, cfg, 1);
    Tensor<float> img({1, 3, 384, 384});
    Rng rng = Rng::keyed({0xacce});
    for (auto& v : img.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));

    // hand-computed skip table: (96^2,128) (48^2,256) (24^2,512) (12^2,1024)
    std::vector<Shape> want = {
        {1, 96, 96, 128}, {1, 48, 48, 256}, {1, 24, 24, 512}, {1, 12, 12, 1024}};
    bool skips_ok = true;
    {
        Tape<float> tape;
        ParamVars<float> P(tape, store, false);
        auto enc = swin_encoder_forward(P, tape.leaf(img), cfg.swin);
        skips_ok = enc.skips.size() == want.size();
        for (size_t i = 0; skips_ok && i < want.size(); ++i)
            skips_ok = tape.val(enc.skips[i]).shape == want[i];
    }
    bool logits_ok = false;
    {
        Tape<float> tape;
        ParamVars<float> P(tape, store, false);
        logits_ok = tape.val(model_forward(P, tape.leaf(img), cfg)).shape ==
                    Shape{1, 1, 384, 384};
    }
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "384^2 input -> 1x1x384x384 logits, 4/4 skip shapes match (%.1fs)",
                  seconds_since(t0));
    report("shape-contract", skips_ok && logits_ok, buf);
}

// ---- 2: partition fixtures ----

DatasetIndex synthetic_index(int64_t n) {
    DatasetIndex index;
    index.root_path = "<synthetic>";
    std::vector<std::string> names;
    Rng rng = Rng::keyed({0xda7a, static_cast<uint64_t>(n)});
    for (int64_t i = 0; i < n; ++i) {
        std::string name;
        for (int k = 0; k < 12; ++k) name += static_cast<char>('a' + rng.next_below(26));
        names.push_back(name + ".jpg");
    }
    std::sort(names.begin(), names.end());
    for (const auto& name : names) index.entries.push_back({"images/" + name, "masks/" + name});
    return index;
}

void partition_fixtures() {
    auto t0 = std::chrono::steady_clock::now();
    auto index = synthetic_index(1000);
    auto a = sorted_fixed_partition(index, {80, 10, 10});
    auto b = sorted_fixed_partition(index, {80, 10, 10});
    bool sizes = a.train.size() == 800 && a.val.size() == 100 && a.test.size() == 100;
    bool stable = nlohmann::json(a).dump() == nlohmann::json(b).dump();
    char buf[160];
    std::snprintf(buf, sizeof(buf), "1000 names -> (%zu,%zu,%zu), byte-stable manifests (%.2fs)",
                  a.train.size(), a.val.size(), a.test.size(), seconds_since(t0));
    report("partition-fixtures", sizes && stable && seconds_since(t0) < 1.0, buf);
}

// ---- 3: leakage audit ----

DatasetIndex cvc_index() {
    DatasetIndex index;
    index.root_path = "<synthetic-cvc>";
    index.kind = DatasetKind::CVCClinicDB;
    std::vector<std::string> names;
    for (int i = 1; i <= 612; ++i) names.push_back(std::to_string(i) + ".tif");
    std::sort(names.begin(), names.end());
    for (const auto& name : names)
        index.entries.push_back({"Original/" + name, "Ground Truth/" + name});
    return index;
}

void leakage_audit() {
    auto t0 = std::chrono::steady_clock::now();
    auto map = load_sequence_map(fs::path(FCBSWIN_DATA_DIR) / "cvc_clinicdb_sequences.csv");
    auto index = cvc_index();
    auto ndl = sequence_partition(index, map, {4, 19, 26}, {11, 18, 23});
    bool ndl_clean = audit_leakage(ndl, map).is_clean();
    bool ndl_sizes = ndl.train.size() == 504 && ndl.val.size() == 54 && ndl.test.size() == 54;
    auto random_spec = random_partition(index, {80, 10, 10}, 1234);
    bool random_leaks = !audit_leakage(random_spec, map).is_clean();
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "NDL split (504,54,54) audits clean; seeded random split leaks (%.2fs)",
                  seconds_since(t0));
    report("leakage-audit", ndl_clean && ndl_sizes && random_leaks && seconds_since(t0) < 1.0,
           buf);
}

// ---- 4: metric oracle equivalence ----

ImageMetrics brute_force_metrics(const Tensor<double>& pred, const Tensor<double>& gt) {
    std::set<int64_t> P, G;
    for (int64_t i = 0; i < pred.numel(); ++i) {
        if (pred[i] != 0) P.insert(i);
        if (gt[i] != 0) G.insert(i);
    }
    std::set<int64_t> inter;
    std::set_intersection(P.begin(), P.end(), G.begin(), G.end(),
                          std::inserter(inter, inter.begin()));
    auto tp = static_cast<double>(inter.size());
    auto fp = static_cast<double>(P.size() - inter.size());
    auto fn = static_cast<double>(G.size() - inter.size());
    if (tp + fp + fn == 0) return {1, 1, 1, 1};
    ImageMetrics m;
    m.dice = 2 * tp / (2 * tp + fp + fn);
    m.iou = tp / (tp + fp + fn);
    m.precision = (tp + fp) == 0 ? 0 : tp / (tp + fp);
    m.recall = (tp + fn) == 0 ? 0 : tp / (tp + fn);
    return m;
}

void metric_oracle() {
    auto t0 = std::chrono::steady_clock::now();
    Rng rng = Rng::keyed({0x0e7a1});
    bool exact = true, identities = true;
    for (int rep = 0; rep < 1000; ++rep) {
        Tensor<double> pred({16, 16}), gt({16, 16});
        double dp = rng.uniform(), dg = rng.uniform();
        for (auto& v : pred.data) v = rng.bernoulli(dp) ? 1.0 : 0.0;
        for (auto& v : gt.data) v = rng.bernoulli(dg) ? 1.0 : 0.0;
        auto fast = image_metrics(pred, gt);
        auto slow = brute_force_metrics(pred, gt);
        exact = exact && fast.dice == slow.dice && fast.iou == slow.iou &&
                fast.precision == slow.precision && fast.recall == slow.recall;
        identities =
            identities && std::abs(fast.dice - 2.0 * fast.iou / (1.0 + fast.iou)) < 1e-12;
        if (fast.precision > 0 && fast.recall > 0)
            identities = identities &&
                         std::abs(fast.dice - 2.0 * fast.precision * fast.recall /
                                                  (fast.precision + fast.recall)) < 1e-12;
    }
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "1000 brute-force pairs exact, dice/iou identities < 1e-12 (%.2fs)",
                  seconds_since(t0));
    report("metric-oracle", exact && identities && seconds_since(t0) < 5.0, buf);
}

// ---- 5: gradient suite ----

void gradient_suite() {
    auto t0 = std::chrono::steady_clock::now();
    auto cases = gradcheck_suite(true);
    bool ok = true;
    double worst = 0;
    std::string worst_name;
    for (const auto& c : cases) {
        ok = ok && c.passed();
        if (c.rel_error / c.tolerance > worst) {
            worst = c.rel_error / c.tolerance;
            worst_name = c.name;
        }
    }
    char buf[200];
    std::snprintf(buf, sizeof(buf), "%zu/%zu checks pass; tightest margin %s at %.1e of tol (%.0fs)",
                  cases.size(), cases.size(), worst_name.c_str(), worst, seconds_since(t0));
    report("gradient-suite", ok && seconds_since(t0) < 120.0, buf);
}

// ---- 6: structural identities ----

void structural_identities() {
    Rng rng = Rng::keyed({0x57f0});
    bool ok = true;

    {  // post-norm zero-branch identity, exact
        ParamStore<double> store;
        init_residual_block(store, "rb", 4, 4, rng);
        for (const char* n : {"rb.conv2.weight", "rb.conv2.bias"}) {
            auto& v = store.at(n).value;
            std::fill(v.data.begin(), v.data.end(), 0.0);
        }
        Tensor<double> x({1, 4, 5, 5});
        for (auto& v : x.data) v = rng.normal();
        Tape<double> t;
        ParamVars<double> P(t, store, false);
        auto y = residual_block_postnorm(P, "rb", t.leaf(x), 2);
        for (int64_t i = 0; i < x.numel(); ++i) ok = ok && t.val(y)[i] == x[i];
    }
    {  // window partition/reverse round trip, exact
        Tensor<double> x({2, 8, 8, 3});
        for (auto& v : x.data) v = rng.normal();
        Tape<double> t;
        auto v = t.leaf(x);
        auto win = t.remap(v, {8, 16, 3}, swin_maps::window_partition(2, 8, 8, 3, 4));
        auto back = t.remap(win, {2, 8, 8, 3}, swin_maps::window_reverse(2, 8, 8, 3, 4));
        for (int64_t i = 0; i < x.numel(); ++i) ok = ok && t.val(back)[i] == x[i];
    }
    {  // attention rows sum to 1, query-scale invariance, both within 1e-6
        ParamStore<double> store;
        init_attention(store, "attn", 8, 2, 2, rng);
        Tensor<double> q({4, 4, 4}), k({4, 4, 4});
        for (auto& v : q.data) v = rng.normal();
        for (auto& v : k.data) v = rng.normal();
        Tensor<double> q3 = q;
        for (int64_t f = 0; f < 4; ++f) q3.at({1, 2, f}) *= 3.0;
        auto probs_of = [&](const Tensor<double>& qq) {
            Tape<double> t;
            ParamVars<double> P(t, store, false);
            return t.val(cosine_attention_probs(t, t.leaf(qq), t.leaf(k), P("attn.log_tau"),
                                                P("attn.rel_bias"), 2, 2, 0.01));
        };
        auto p1 = probs_of(q);
        auto p3 = probs_of(q3);
        for (int64_t r = 0; r < 16; ++r) {
            double sum = 0;
            for (int64_t j = 0; j < 4; ++j) sum += p1[r * 4 + j];
            ok = ok && std::abs(sum - 1.0) < 1e-6;
        }
        for (int64_t i = 0; i < p1.numel(); ++i) ok = ok && std::abs(p1[i] - p3[i]) < 1e-6;
    }
    {  // SCSE with both gates saturated at 1 doubles the input within 1e-6
        ParamStore<double> store;
        init_scse(store, "scse", 4, 2, rng);
        for (const char* n : {"scse.cse_fc2.weight", "scse.sse_conv.weight"}) {
            auto& v = store.at(n).value;
            std::fill(v.data.begin(), v.data.end(), 0.0);
        }
        for (const char* n : {"scse.cse_fc2.bias", "scse.sse_conv.bias"}) {
            auto& v = store.at(n).value;
            std::fill(v.data.begin(), v.data.end(), 50.0);
        }
        Tensor<double> x({1, 4, 3, 3});
        for (auto& v : x.data) v = rng.normal();
        Tape<double> t;
        ParamVars<double> P(t, store, false);
        auto y = scse(P, "scse", t.leaf(x));
        for (int64_t i = 0; i < x.numel(); ++i)
            ok = ok && std::abs(t.val(y)[i] - 2.0 * x[i]) < 1e-6;
    }
    report("structural-identities", ok,
           "post-norm identity, window round trip, attention rows, SCSE 2x");
}

// ---- 7: desk-scale learning ----

SampleLoader<float> disk_loader(int64_t size) {
    return [size](const std::string& name) {
        Rng rng = Rng::keyed({0xd15c, std::hash<std::string>{}(name)});
        double cx = rng.uniform(0.3, 0.7) * static_cast<double>(size);
        double cy = rng.uniform(0.3, 0.7) * static_cast<double>(size);
        double radius = rng.uniform(0.15, 0.3) * static_cast<double>(size);
        Tensor<float> img({size, size, 3});
        Tensor<float> mask({size, size});
        for (int64_t y = 0; y < size; ++y)
            for (int64_t x = 0; x < size; ++x) {
                double d = std::hypot(static_cast<double>(x) - cx, static_cast<double>(y) - cy);
                bool in = d < radius;
                mask.data[y * size + x] = in ? 1.0f : 0.0f;
                for (int64_t c = 0; c < 3; ++c)
                    img.data[(y * size + x) * 3 + c] =
                        static_cast<float>((in ? 0.8 : 0.2) + 0.05 * rng.uniform(-1.0, 1.0));
            }
        for (auto& v : img.data) v = std::min(1.0f, std::max(0.0f, v));
        return std::make_pair(std::move(img), std::move(mask));
    };
}

void desk_scale_learning() {
    auto t0 = std::chrono::steady_clock::now();
    const int64_t size = 64;
    ModelConfig cfg = ModelConfig::toy(size);
    ParamStore<float> store;
    init_model_params(store, cfg, 7);
    auto loader = disk_loader(size);
    std::vector<std::string> names = {"a", "b", "c", "d"};
    AugmentConfig aug = AugmentConfig::identity();

    // BCE+dice with AdamW as in the training recipe; lr 1e-5 is scaled up to
    // 1e-3 for the toy (documented deviation), batch size 2.
    const double lr = 1e-3;
    AdamWState<float> opt(store);
    int64_t steps = 0;
    double mdice = 0;
    Rng order_rng = Rng::keyed({0x0f1e});
    while (steps < 300) {
        std::vector<size_t> order = {0, 1, 2, 3};
        order_rng.shuffle(order);
        for (size_t start = 0; start < 4; start += 2) {
            Tensor<float> input({2, 3, size, size});
            Tensor<float> target({2, 1, size, size});
            for (size_t b = 0; b < 2; ++b) {
                auto [img, mask] = loader(names[order[start + b]]);
                Rng rng = sample_rng(0, static_cast<uint64_t>(steps), order[start + b]);
                auto [ai, am] = augment_train_pair(img, mask, rng, aug);
                detail::hwc_into_nchw(ai, input, static_cast<int64_t>(b));
                std::copy(am.data.begin(), am.data.end(),
                          target.data.begin() + static_cast<int64_t>(b) * size * size);
            }
            Tape<float> tape;
            ParamVars<float> P(tape, store, true);
            auto logits = model_forward(P, tape.leaf(input), cfg);
            auto loss = bce_dice_loss(tape, logits,
                                      std::make_shared<const Tensor<float>>(std::move(target)));
            tape.backward(loss);
            store.zero_grads();
            P.write_back_grads();
            adamw_step(store, opt, lr, 1e-2);
            steps++;
        }
        if (steps % 10 == 0 || steps >= 300) {
            mdice = evaluate(store, cfg, names, loader).mdice;
            if (mdice > 0.95) break;
        }
    }
    bool overfit_ok = mdice > 0.95 && steps <= 300;

    // LR log obeys lr0 * 0.6^k exactly under an artificially plateaued loss
    PlateauState sched(1e-5);
    bool lr_ok = true;
    for (int epoch = 0; epoch < 45; ++epoch) {
        int64_t k = epoch <= 10 ? 0 : (epoch - 1) / 10;
        lr_ok = lr_ok &&
                std::abs(sched.lr - 1e-5 * std::pow(0.6, static_cast<double>(k))) < 1e-20;
        plateau_schedule(sched, 0.5, 0.6, 10);
    }

    char buf[200];
    std::snprintf(buf, sizeof(buf),
                  "train mDice %.4f after %lld steps (<=300); plateau lr = lr0*0.6^k (%.0fs)",
                  mdice, static_cast<long long>(steps), seconds_since(t0));
    report("desk-scale-learning", overfit_ok && lr_ok && seconds_since(t0) < 300.0, buf);
}

// ---- 8: augmentation reproducibility ----

void augmentation_reproducibility() {
    Rng data_rng = Rng::keyed({0xab5e});
    Tensor<float> img({32, 32, 3});
    Tensor<float> mask({32, 32});
    for (auto& v : img.data) v = static_cast<float>(data_rng.uniform());
    for (auto& v : mask.data) v = data_rng.bernoulli(0.4) ? 1.0f : 0.0f;

    AugmentConfig cfg;
    cfg.translate_px = {-6.0, 6.0};

    bool bitwise = true;
    {
        Rng r1 = sample_rng(11, 4, 9);
        Rng r2 = sample_rng(11, 4, 9);
        auto [i1, m1] = augment_train_pair(img, mask, r1, cfg);
        auto [i2, m2] = augment_train_pair(img, mask, r2, cfg);
        for (int64_t i = 0; i < i1.numel(); ++i) bitwise = bitwise && i1[i] == i2[i];
        for (int64_t i = 0; i < m1.numel(); ++i) bitwise = bitwise && m1[i] == m2[i];
    }
    bool binary = true;
    for (uint64_t draw = 0; draw < 100 && binary; ++draw) {
        Rng rg = sample_rng(12, 0, draw);
        auto [gi, gm] = geometric_augment(img, mask, rg, cfg);
        for (int64_t i = 0; i < gm.numel(); ++i)
            binary = binary && (gm[i] == 0.0f || gm[i] == 1.0f);
        auto [ri, rm] = resize_pair(gi, gm, 48, 48);
        for (int64_t i = 0; i < rm.numel(); ++i)
            binary = binary && (rm[i] == 0.0f || rm[i] == 1.0f);
    }
    report("augment-reproducibility", bitwise && binary,
           "bitwise-identical keyed draws; masks binary over 100 draws");
}

}  // namespace

int main() {
    shape_contract();
    partition_fixtures();
    leakage_audit();
    metric_oracle();
    gradient_suite();
    structural_identities();
    desk_scale_learning();
    augmentation_reproducibility();
    if (g_failures > 0) {
        std::printf("%d criterion(s) FAILED\n", g_failures);
        return 1;
    }
    std::printf("all acceptance criteria passed\n");
    return 0;
}
