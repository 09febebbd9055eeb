#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fcbswin/common.hpp"
#include "fcbswin/rng.hpp"

namespace fcbswin {

enum class DatasetKind { KvasirSEG, CVCClinicDB, Generic };

inline std::string to_string(DatasetKind k) {
    switch (k) {
        case DatasetKind::KvasirSEG: return "KvasirSEG";
        case DatasetKind::CVCClinicDB: return "CVCClinicDB";
        default: return "Generic";
    }
}

struct DatasetEntry {
    std::string image_relpath;
    std::string mask_relpath;
};

struct DatasetIndex {
    std::string root_path;
    DatasetKind kind = DatasetKind::Generic;
    std::vector<DatasetEntry> entries;

    int64_t image_count() const { return static_cast<int64_t>(entries.size()); }

    /// Canonical filename list: image basenames in bytewise-lexicographic order.
    std::vector<std::string> filenames() const {
        std::vector<std::string> names;
        names.reserve(entries.size());
        for (const auto& e : entries)
            names.push_back(std::filesystem::path(e.image_relpath).filename().string());
        return names;
    }
};

namespace detail {

inline std::pair<std::string, std::string> dataset_dirs(DatasetKind kind) {
    switch (kind) {
        case DatasetKind::KvasirSEG: return {"images", "masks"};
        case DatasetKind::CVCClinicDB: return {"Original", "Ground Truth"};
        default: return {"images", "masks"};
    }
}

}  // namespace detail

inline DatasetIndex load_dataset(const std::filesystem::path& root, DatasetKind kind) {
    namespace fs = std::filesystem;
    auto [img_dir, mask_dir] = detail::dataset_dirs(kind);
    fs::path images = root / img_dir;
    fs::path masks = root / mask_dir;
    if (!fs::is_directory(root)) throw UnreadableRoot(root.string());
    if (!fs::is_directory(images) || !fs::is_directory(masks))
        throw UnreadableRoot("expected subdirectories '" + img_dir + "' and '" + mask_dir +
                             "' under " + root.string());

    // masks keyed by stem so extensions may differ between the two trees
    std::map<std::string, std::string> mask_by_stem;
    for (const auto& de : fs::directory_iterator(masks))
        if (de.is_regular_file())
            mask_by_stem[de.path().stem().string()] = de.path().filename().string();

    DatasetIndex index;
    index.root_path = root.string();
    index.kind = kind;
    for (const auto& de : fs::directory_iterator(images)) {
        if (!de.is_regular_file()) continue;
        std::string name = de.path().filename().string();
        auto it = mask_by_stem.find(de.path().stem().string());
        if (it == mask_by_stem.end()) throw MissingMask(name);
        index.entries.push_back({img_dir + "/" + name, mask_dir + "/" + it->second});
    }
    if (index.entries.empty()) throw EmptyDataset(root.string());
    std::sort(index.entries.begin(), index.entries.end(),
              [](const DatasetEntry& a, const DatasetEntry& b) {
                  return fs::path(a.image_relpath).filename().string() <
                         fs::path(b.image_relpath).filename().string();
              });
    return index;
}

struct SequenceMap {
    std::map<std::string, int64_t> mapping;  // image filename -> sequence id
    std::string source;

    int64_t sequence_of(const std::string& filename) const {
        auto it = mapping.find(filename);
        if (it == mapping.end()) throw UnmappedFilename(filename);
        return it->second;
    }
    std::set<int64_t> sequence_ids() const {
        std::set<int64_t> ids;
        for (const auto& [_, id] : mapping) ids.insert(id);
        return ids;
    }
};

/// CSV with header `filename,sequence_id`, one row per image.
inline SequenceMap load_sequence_map(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw UnreadableRoot(path.string());
    SequenceMap map;
    map.source = path.string();
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (header) {
            check(line == "filename,sequence_id",
                  "sequence map header must be 'filename,sequence_id', got '" + line + "'");
            header = false;
            continue;
        }
        auto comma = line.rfind(',');
        check(comma != std::string::npos, "malformed sequence map row: " + line);
        std::string name = line.substr(0, comma);
        int64_t id = std::stoll(line.substr(comma + 1));
        check(map.mapping.emplace(name, id).second, "duplicate sequence map row: " + name);
    }
    check(!map.mapping.empty(), "empty sequence map: " + path.string());
    return map;
}

inline void save_sequence_map(const SequenceMap& map, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    check(static_cast<bool>(out), "cannot write " + path.string());
    out << "filename,sequence_id\n";
    for (const auto& [name, id] : map.mapping) out << name << "," << id << "\n";
}

enum class PartitionMethod { SortedFixed, RandomSeeded, SequenceGrouped };

inline std::string to_string(PartitionMethod m) {
    switch (m) {
        case PartitionMethod::SortedFixed: return "SortedFixed";
        case PartitionMethod::RandomSeeded: return "RandomSeeded";
        default: return "SequenceGrouped";
    }
}

inline PartitionMethod partition_method_from_string(const std::string& s) {
    if (s == "SortedFixed") return PartitionMethod::SortedFixed;
    if (s == "RandomSeeded") return PartitionMethod::RandomSeeded;
    if (s == "SequenceGrouped") return PartitionMethod::SequenceGrouped;
    throw ConfigError("unknown partition method: " + s);
}

struct Provenance {
    std::vector<double> ratios;  // percentages, empty for sequence splits
    std::optional<uint64_t> seed;
    std::vector<int64_t> val_sequences;
    std::vector<int64_t> test_sequences;
};

struct PartitionSpec {
    PartitionMethod method = PartitionMethod::SortedFixed;
    Provenance provenance;
    std::vector<std::string> train, val, test;
};

struct LeakageEntry {
    int64_t sequence_id;
    std::vector<std::string> partitions;  // subset of {"train","val","test"}
};

struct LeakageReport {
    std::vector<LeakageEntry> leaking_sequences;
    bool is_clean() const { return leaking_sequences.empty(); }
};

namespace detail {

struct SliceSizes {
    int64_t train, val;
};

inline SliceSizes slice_sizes(int64_t n, const std::vector<double>& ratios) {
    if (ratios.size() != 3) throw BadRatios("expected three percentages");
    double sum = ratios[0] + ratios[1] + ratios[2];
    if (std::abs(sum - 100.0) > 1e-9) throw BadRatios("percentages must sum to 100");
    for (double r : ratios)
        if (r < 0) throw BadRatios("negative percentage");
    // floor slicing; the remainder lands in test
    int64_t n_train = static_cast<int64_t>(std::floor(ratios[0] / 100.0 * n));
    int64_t n_val = static_cast<int64_t>(std::floor(ratios[1] / 100.0 * n));
    return {n_train, n_val};
}

inline PartitionSpec slice_partition(std::vector<std::string> names,
                                     const std::vector<double>& ratios, PartitionMethod method) {
    auto sz = slice_sizes(static_cast<int64_t>(names.size()), ratios);
    PartitionSpec spec;
    spec.method = method;
    spec.provenance.ratios = ratios;
    spec.train.assign(names.begin(), names.begin() + sz.train);
    spec.val.assign(names.begin() + sz.train, names.begin() + sz.train + sz.val);
    spec.test.assign(names.begin() + sz.train + sz.val, names.end());
    return spec;
}

}  // namespace detail

inline PartitionSpec sorted_fixed_partition(const DatasetIndex& index,
                                            const std::vector<double>& ratios) {
    check(!index.entries.empty(), "empty dataset index");
    std::vector<std::string> names = index.filenames();
    std::sort(names.begin(), names.end());
    return detail::slice_partition(std::move(names), ratios, PartitionMethod::SortedFixed);
}

inline PartitionSpec random_partition(const DatasetIndex& index, const std::vector<double>& ratios,
                                      uint64_t seed) {
    check(!index.entries.empty(), "empty dataset index");
    std::vector<std::string> names = index.filenames();
    std::sort(names.begin(), names.end());
    Rng rng = Rng::keyed({seed, 0x5911});
    rng.shuffle(names);
    PartitionSpec spec =
        detail::slice_partition(std::move(names), ratios, PartitionMethod::RandomSeeded);
    spec.provenance.seed = seed;
    return spec;
}

inline PartitionSpec sequence_partition(const DatasetIndex& index, const SequenceMap& seqmap,
                                        const std::set<int64_t>& val_sequences,
                                        const std::set<int64_t>& test_sequences) {
    for (int64_t id : val_sequences)
        if (test_sequences.count(id))
            throw OverlappingSequenceSets("sequence " + std::to_string(id) +
                                          " in both val and test");
    std::set<int64_t> known = seqmap.sequence_ids();
    for (const auto& holdout : {val_sequences, test_sequences})
        for (int64_t id : holdout)
            if (!known.count(id)) throw UnknownSequenceId(std::to_string(id));

    PartitionSpec spec;
    spec.method = PartitionMethod::SequenceGrouped;
    spec.provenance.val_sequences.assign(val_sequences.begin(), val_sequences.end());
    spec.provenance.test_sequences.assign(test_sequences.begin(), test_sequences.end());
    for (const std::string& name : index.filenames()) {
        int64_t id = seqmap.sequence_of(name);
        if (val_sequences.count(id))
            spec.val.push_back(name);
        else if (test_sequences.count(id))
            spec.test.push_back(name);
        else
            spec.train.push_back(name);
    }
    return spec;
}

inline LeakageReport audit_leakage(const PartitionSpec& spec, const SequenceMap& seqmap) {
    std::map<int64_t, std::set<std::string>> spans;
    auto scan = [&](const std::vector<std::string>& names, const char* part) {
        for (const auto& name : names) spans[seqmap.sequence_of(name)].insert(part);
    };
    scan(spec.train, "train");
    scan(spec.val, "val");
    scan(spec.test, "test");
    LeakageReport report;
    for (const auto& [id, parts] : spans)
        if (parts.size() >= 2)
            report.leaking_sequences.push_back({id, {parts.begin(), parts.end()}});
    return report;
}

// ---- JSON manifest ----

inline void to_json(nlohmann::json& j, const PartitionSpec& spec) {
    nlohmann::json prov;
    if (!spec.provenance.ratios.empty()) prov["ratios"] = spec.provenance.ratios;
    if (spec.provenance.seed) prov["seed"] = *spec.provenance.seed;
    if (!spec.provenance.val_sequences.empty())
        prov["val_sequences"] = spec.provenance.val_sequences;
    if (!spec.provenance.test_sequences.empty())
        prov["test_sequences"] = spec.provenance.test_sequences;
    j = nlohmann::json{{"method", to_string(spec.method)},
                       {"provenance", prov},
                       {"train", spec.train},
                       {"val", spec.val},
                       {"test", spec.test}};
}

inline void from_json(const nlohmann::json& j, PartitionSpec& spec) {
    spec.method = partition_method_from_string(j.at("method").get<std::string>());
    const auto& prov = j.at("provenance");
    spec.provenance = {};
    if (prov.contains("ratios")) spec.provenance.ratios = prov["ratios"].get<std::vector<double>>();
    if (prov.contains("seed")) spec.provenance.seed = prov["seed"].get<uint64_t>();
    if (prov.contains("val_sequences"))
        spec.provenance.val_sequences = prov["val_sequences"].get<std::vector<int64_t>>();
    if (prov.contains("test_sequences"))
        spec.provenance.test_sequences = prov["test_sequences"].get<std::vector<int64_t>>();
    spec.train = j.at("train").get<std::vector<std::string>>();
    spec.val = j.at("val").get<std::vector<std::string>>();
    spec.test = j.at("test").get<std::vector<std::string>>();
}

inline void save_partition(const PartitionSpec& spec, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    check(static_cast<bool>(out), "cannot write " + path.string());
    out << nlohmann::json(spec).dump(2) << "\n";
}

inline PartitionSpec load_partition(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw UnreadableRoot(path.string());
    nlohmann::json j;
    in >> j;
    return j.get<PartitionSpec>();
}

}  // namespace fcbswin
