// fcbswin command-line entry point.
//
// Subcommands: split, audit, train, eval, predict, gradcheck.
// Exit codes: 0 ok, 1 usage, 2 config/validation, 3 leakage detected,
// 4 runtime failure.
//
// All randomness is surfaced through explicit --seed flags / config keys.
// FCB_DETERMINISTIC=1 is honored but currently a no-op: execution is
// single-threaded with a fixed reduction order, so runs are already
// bitwise-reproducible.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <set>

#include "fcbswin/datakit.hpp"
#include "fcbswin/gradcheck.hpp"
#include "fcbswin/imageio.hpp"
#include "fcbswin/trainer.hpp"

namespace fs = std::filesystem;
using namespace fcbswin;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitConfig = 2;
constexpr int kExitLeakage = 3;
constexpr int kExitRuntime = 4;

DatasetKind parse_kind(const std::string& s) {
    if (s == "kvasir") return DatasetKind::KvasirSEG;
    if (s == "cvc") return DatasetKind::CVCClinicDB;
    if (s == "generic") return DatasetKind::Generic;
    throw ConfigError("unknown dataset kind '" + s + "' (expected kvasir|cvc|generic)");
}

std::vector<double> parse_ratios(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(std::stod(tok));
    return out;
}

void require_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                  const std::string& where) {
    for (const auto& [key, _] : j.items())
        if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
}

void from_json_checked(const nlohmann::json& j, AugmentConfig& cfg) {
    require_keys(j,
                 {"flip_prob", "scale_range", "shear_deg", "translate_px", "rotate_deg",
                  "brightness", "contrast", "saturation", "hue_factor", "blur_kernel",
                  "blur_sigma"},
                 "augment config");
    if (j.contains("flip_prob")) cfg.flip_prob = j["flip_prob"].get<double>();
    auto range = [&](const char* key, std::array<double, 2>& dst) {
        if (j.contains(key)) dst = j[key].get<std::array<double, 2>>();
    };
    range("scale_range", cfg.scale_range);
    range("shear_deg", cfg.shear_deg);
    range("translate_px", cfg.translate_px);
    range("rotate_deg", cfg.rotate_deg);
    range("brightness", cfg.brightness);
    range("contrast", cfg.contrast);
    range("saturation", cfg.saturation);
    range("hue_factor", cfg.hue_factor);
    range("blur_sigma", cfg.blur_sigma);
    if (j.contains("blur_kernel")) cfg.blur_kernel = j["blur_kernel"].get<int64_t>();
    cfg.validate();
}

void from_json_checked(const nlohmann::json& j, TrainConfig& cfg) {
    require_keys(j,
                 {"epochs", "batch_size", "lr0", "plateau_factor", "plateau_patience",
                  "plateau_delta", "weight_decay", "global_seed", "augment"},
                 "train config");
    if (j.contains("epochs")) cfg.epochs = j["epochs"].get<int64_t>();
    if (j.contains("batch_size")) cfg.batch_size = j["batch_size"].get<int64_t>();
    if (j.contains("lr0")) cfg.lr0 = j["lr0"].get<double>();
    if (j.contains("plateau_factor")) cfg.plateau_factor = j["plateau_factor"].get<double>();
    if (j.contains("plateau_patience"))
        cfg.plateau_patience = j["plateau_patience"].get<int64_t>();
    if (j.contains("plateau_delta")) cfg.plateau_delta = j["plateau_delta"].get<double>();
    if (j.contains("weight_decay")) cfg.weight_decay = j["weight_decay"].get<double>();
    if (j.contains("global_seed")) cfg.global_seed = j["global_seed"].get<uint64_t>();
    if (j.contains("augment")) from_json_checked(j["augment"], cfg.augment);
    cfg.validate();
}

nlohmann::json load_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw UnreadableRoot(path.string());
    nlohmann::json j;
    in >> j;
    return j;
}

ModelConfig load_model_config(const nlohmann::json& j) {
    ModelConfig cfg = j.get<ModelConfig>();
    cfg.validate();
    return cfg;
}

/// Loader reading image/mask pairs from a DatasetIndex by image filename.
SampleLoader<float> index_loader(const DatasetIndex& index) {
    auto by_name = std::make_shared<std::map<std::string, DatasetEntry>>();
    for (const auto& e : index.entries)
        (*by_name)[fs::path(e.image_relpath).filename().string()] = e;
    fs::path root = index.root_path;
    return [by_name, root](const std::string& name) {
        auto it = by_name->find(name);
        if (it == by_name->end()) throw UnmappedFilename(name);
        return std::make_pair(load_image<float>(root / it->second.image_relpath),
                              load_mask<float>(root / it->second.mask_relpath));
    };
}

std::set<int64_t> parse_id_set(const std::string& s) {
    std::set<int64_t> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.insert(std::stoll(tok));
    return out;
}

int cmd_split(const std::string& root, const std::string& kind_str, const std::string& method,
              const std::string& ratios_str, uint64_t seed, const std::string& seqmap_path,
              const std::string& val_seqs, const std::string& test_seqs,
              const std::string& out_path) {
    auto index = load_dataset(root, parse_kind(kind_str));
    PartitionSpec spec;
    if (method == "sorted") {
        spec = sorted_fixed_partition(index, parse_ratios(ratios_str));
    } else if (method == "random") {
        spec = random_partition(index, parse_ratios(ratios_str), seed);
    } else if (method == "sequence") {
        if (seqmap_path.empty()) throw ConfigError("sequence split requires --seqmap");
        auto map = load_sequence_map(seqmap_path);
        spec = sequence_partition(index, map, parse_id_set(val_seqs), parse_id_set(test_seqs));
    } else {
        throw ConfigError("unknown split method '" + method + "'");
    }
    save_partition(spec, out_path);
    std::cout << "wrote " << out_path << " (train " << spec.train.size() << ", val "
              << spec.val.size() << ", test " << spec.test.size() << ")\n";
    return 0;
}

int cmd_audit(const std::string& manifest_path, const std::string& seqmap_path) {
    auto spec = load_partition(manifest_path);
    auto map = load_sequence_map(seqmap_path);
    auto report = audit_leakage(spec, map);
    if (report.is_clean()) {
        std::cout << "clean: no sequence spans multiple partitions\n";
        return 0;
    }
    for (const auto& leak : report.leaking_sequences) {
        std::cout << "leak: sequence " << leak.sequence_id << " spans";
        for (const auto& p : leak.partitions) std::cout << " " << p;
        std::cout << "\n";
    }
    return kExitLeakage;
}

int cmd_train(const std::string& config_path, const std::string& out_dir) {
    nlohmann::json j = load_json(config_path);
    require_keys(j, {"model", "train", "data"}, "run config");
    ModelConfig mcfg = load_model_config(j.at("model"));
    TrainConfig tcfg;
    if (j.contains("train")) from_json_checked(j.at("train"), tcfg);
    const auto& data = j.at("data");
    require_keys(data, {"root", "kind", "manifest"}, "data config");
    auto index = load_dataset(data.at("root").get<std::string>(),
                              parse_kind(data.at("kind").get<std::string>()));
    auto spec = load_partition(data.at("manifest").get<std::string>());

    ParamStore<float> store;
    init_model_params(store, mcfg, tcfg.global_seed);
    auto result = train(store, mcfg, tcfg, spec.train, spec.val, index_loader(index), out_dir);
    std::cout << "best val mDice " << result.best_val_dice << " -> " << result.best_checkpoint
              << "\n";
    return 0;
}

int cmd_eval(const std::string& config_path, const std::string& weights_path,
             const std::string& root, const std::string& kind_str,
             const std::string& manifest_path, const std::string& split, bool full_dataset,
             const std::string& out_prefix) {
    ModelConfig mcfg = load_model_config(load_json(config_path));
    auto index = load_dataset(root, parse_kind(kind_str));
    std::vector<std::string> names;
    if (full_dataset) {
        names = index.filenames();
    } else {
        if (manifest_path.empty())
            throw ConfigError("eval requires --manifest or --full-dataset");
        auto spec = load_partition(manifest_path);
        if (split == "train")
            names = spec.train;
        else if (split == "val")
            names = spec.val;
        else if (split == "test")
            names = spec.test;
        else
            throw ConfigError("unknown split '" + split + "'");
    }
    ParamStore<float> store;
    init_model_params(store, mcfg, 0);
    load_weights(store, weights_path);
    auto report = evaluate(store, mcfg, names, index_loader(index));
    write_metrics_csv(report, out_prefix + ".csv");
    write_metrics_summary(report, out_prefix + ".json");
    std::cout << "mDice " << report.mdice << "  mIoU " << report.miou << "  mPrecision "
              << report.mprecision << "  mRecall " << report.mrecall << " ("
              << report.per_image.size() << " images)\n";
    return 0;
}

int cmd_predict(const std::string& config_path, const std::string& weights_path,
                const std::string& images_dir, const std::string& out_dir) {
    ModelConfig mcfg = load_model_config(load_json(config_path));
    ParamStore<float> store;
    init_model_params(store, mcfg, 0);
    load_weights(store, weights_path);
    fs::create_directories(out_dir);

    std::vector<fs::path> files;
    for (const auto& de : fs::directory_iterator(images_dir))
        if (de.is_regular_file()) files.push_back(de.path());
    std::sort(files.begin(), files.end());
    check(!files.empty(), "no images in " + images_dir);

    for (const auto& file : files) {
        Tensor<float> img = load_image<float>(file);
        Tensor<float> dummy_mask = Tensor<float>::zeros({img.shape[0], img.shape[1]});
        auto [ri, rm] = resize_pair(img, dummy_mask, mcfg.img_size, mcfg.img_size);
        Tensor<float> input({1, 3, mcfg.img_size, mcfg.img_size});
        Tensor<float> norm = normalize(ri);
        for (int64_t c = 0; c < 3; ++c)
            for (int64_t y = 0; y < mcfg.img_size; ++y)
                for (int64_t x = 0; x < mcfg.img_size; ++x)
                    input.at({0, c, y, x}) = norm.at({y, x, c});
        Tape<float> tape;
        ParamVars<float> P(tape, store, false);
        const auto& logits = tape.val(model_forward(P, tape.leaf(input), mcfg));
        Tensor<float> mask = binarize(logits).reshaped({mcfg.img_size, mcfg.img_size});
        fs::path out = fs::path(out_dir) / (file.stem().string() + ".png");
        save_mask(mask, out);
        std::cout << out.string() << "\n";
    }
    return 0;
}

int cmd_gradcheck() {
    bool all_pass = true;
    for (const auto& c : gradcheck_suite(true)) {
        std::cout << (c.passed() ? "PASS" : "FAIL") << "  " << c.name << "  rel_error "
                  << c.rel_error << " (tol " << c.tolerance << ")\n";
        all_pass = all_pass && c.passed();
    }
    return all_pass ? 0 : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"FCB-SwinV2 polyp segmentation toolkit"};
    app.require_subcommand(1);

    // split
    std::string root, kind = "generic", method = "sorted", ratios = "80,10,10";
    std::string seqmap, val_seqs, test_seqs, out_path = "partition.json";
    uint64_t seed = 0;
    auto* split = app.add_subcommand("split", "emit a partition manifest");
    split->add_option("--root", root, "dataset root")->required();
    split->add_option("--kind", kind, "kvasir|cvc|generic");
    split->add_option("--method", method, "sorted|random|sequence");
    split->add_option("--ratios", ratios, "train,val,test percentages");
    split->add_option("--seed", seed, "shuffle seed (random method)");
    split->add_option("--seqmap", seqmap, "sequence map CSV (sequence method)");
    split->add_option("--val-seqs", val_seqs, "comma-separated validation sequence ids");
    split->add_option("--test-seqs", test_seqs, "comma-separated test sequence ids");
    split->add_option("--out", out_path, "output manifest path");

    // audit
    std::string manifest;
    auto* audit = app.add_subcommand("audit", "check a manifest for sequence leakage");
    audit->add_option("--manifest", manifest, "partition manifest")->required();
    audit->add_option("--seqmap", seqmap, "sequence map CSV")->required();

    // train
    std::string config_path, out_dir = "runs";
    auto* train_cmd = app.add_subcommand("train", "train from a JSON run config");
    train_cmd->add_option("--config", config_path, "run config JSON")->required();
    train_cmd->add_option("--out", out_dir, "output directory");

    // eval
    std::string weights, split_name = "test", out_prefix = "metrics";
    bool full_dataset = false;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    eval_cmd->add_option("--config", config_path, "model config JSON")->required();
    eval_cmd->add_option("--weights", weights, "weight archive")->required();
    eval_cmd->add_option("--root", root, "dataset root")->required();
    eval_cmd->add_option("--kind", kind, "kvasir|cvc|generic");
    eval_cmd->add_option("--manifest", manifest, "partition manifest");
    eval_cmd->add_option("--split", split_name, "train|val|test (default test)");
    eval_cmd->add_flag("--full-dataset", full_dataset, "evaluate every image in the dataset");
    eval_cmd->add_option("--out", out_prefix, "output prefix for .csv/.json");

    // predict
    std::string images_dir;
    auto* predict = app.add_subcommand("predict", "write binary PNG masks for a directory");
    predict->add_option("--config", config_path, "model config JSON")->required();
    predict->add_option("--weights", weights, "weight archive")->required();
    predict->add_option("--images", images_dir, "input image directory")->required();
    predict->add_option("--out", out_dir, "output directory")->required();

    // gradcheck
    app.add_subcommand("gradcheck", "run the finite-difference suite on toy configs");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return e.get_exit_code() == 0 ? 0 : kExitUsage;
    }

    try {
        if (split->parsed())
            return cmd_split(root, kind, method, ratios, seed, seqmap, val_seqs, test_seqs,
                             out_path);
        if (audit->parsed()) return cmd_audit(manifest, seqmap);
        if (train_cmd->parsed()) return cmd_train(config_path, out_dir);
        if (eval_cmd->parsed())
            return cmd_eval(config_path, weights, root, kind, manifest, split_name, full_dataset,
                            out_prefix);
        if (predict->parsed()) return cmd_predict(config_path, weights, images_dir, out_dir);
        return cmd_gradcheck();
    } catch (const BadRatios& e) {
        std::cerr << e.what() << "\n";
        return kExitConfig;
    } catch (const ConfigError& e) {
        std::cerr << e.what() << "\n";
        return kExitConfig;
    } catch (const ConfigMismatch& e) {
        std::cerr << e.what() << "\n";
        return kExitConfig;
    } catch (const OverlappingSequenceSets& e) {
        std::cerr << e.what() << "\n";
        return kExitConfig;
    } catch (const UnknownSequenceId& e) {
        std::cerr << e.what() << "\n";
        return kExitConfig;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "config: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << e.what() << "\n";
        return kExitRuntime;
    }
}
