#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fcbswin/common.hpp"
#include "fcbswin/tape.hpp"
#include "fcbswin/tensor.hpp"

namespace fcbswin {

/// Training loss: stable-logit BCE (mean over all pixels) plus smoothed dice
/// loss (eps = 1, sums over the whole batch).
template <typename T>
typename Tape<T>::Var bce_dice_loss(Tape<T>& tape, typename Tape<T>::Var logits,
                                    std::shared_ptr<const Tensor<T>> target) {
    const auto& ls = tape.val(logits).shape;
    if (ls != target->shape) throw ShapeMismatch("bce_dice_loss: logits vs target");
    for (const T& v : target->data)
        if (v != T(0) && v != T(1)) throw NonBinaryTarget("bce_dice_loss");
    return tape.add(tape.bce_with_logits_mean(logits, target), tape.dice_loss(logits, target));
}

/// pixel = 1 iff logistic(logit) > 0.5, i.e. logit > 0 (strict).
template <typename T>
Tensor<T> binarize(const Tensor<T>& logits) {
    Tensor<T> out(logits.shape);
    for (int64_t i = 0; i < logits.numel(); ++i) out[i] = logits[i] > T(0) ? T(1) : T(0);
    return out;
}

struct ImageMetrics {
    double dice, iou, precision, recall;
};

/// Per-image overlap metrics from TP/FP/FN pixel counts. Conventions: both
/// masks empty -> all four are 1; a zero denominator against a nonempty other
/// mask -> that metric is 0.
template <typename T>
ImageMetrics image_metrics(const Tensor<T>& pred, const Tensor<T>& gt) {
    if (pred.shape != gt.shape) throw ShapeMismatch("image_metrics: pred vs gt");
    int64_t tp = 0, fp = 0, fn = 0;
    for (int64_t i = 0; i < pred.numel(); ++i) {
        bool p = pred[i] != T(0), g = gt[i] != T(0);
        tp += p && g;
        fp += p && !g;
        fn += !p && g;
    }
    if (tp + fp + fn == 0) return {1.0, 1.0, 1.0, 1.0};
    auto ratio = [](int64_t num, int64_t den) {
        return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
    };
    return {ratio(2 * tp, 2 * tp + fp + fn), ratio(tp, tp + fp + fn), ratio(tp, tp + fp),
            ratio(tp, tp + fn)};
}

struct PerImageMetrics {
    std::string filename;
    ImageMetrics metrics;
};

struct MetricsReport {
    std::vector<PerImageMetrics> per_image;
    double mdice = 0, miou = 0, mprecision = 0, mrecall = 0;
    double threshold = 0.5;
};

inline MetricsReport aggregate(std::vector<PerImageMetrics> per_image, double threshold = 0.5) {
    if (per_image.empty()) throw EmptyList("aggregate: no per-image metrics");
    MetricsReport report;
    report.per_image = std::move(per_image);
    report.threshold = threshold;
    for (const auto& e : report.per_image) {
        report.mdice += e.metrics.dice;
        report.miou += e.metrics.iou;
        report.mprecision += e.metrics.precision;
        report.mrecall += e.metrics.recall;
    }
    double n = static_cast<double>(report.per_image.size());
    report.mdice /= n;
    report.miou /= n;
    report.mprecision /= n;
    report.mrecall /= n;
    return report;
}

inline void write_metrics_csv(const MetricsReport& report, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    check(static_cast<bool>(out), "cannot write " + path.string());
    out << "filename,dice,iou,precision,recall\n";
    out.precision(17);
    for (const auto& e : report.per_image)
        out << e.filename << "," << e.metrics.dice << "," << e.metrics.iou << ","
            << e.metrics.precision << "," << e.metrics.recall << "\n";
}

inline void write_metrics_summary(const MetricsReport& report,
                                  const std::filesystem::path& path) {
    nlohmann::json j{{"mDice", report.mdice},
                     {"mIoU", report.miou},
                     {"mPrecision", report.mprecision},
                     {"mRecall", report.mrecall},
                     {"threshold", report.threshold},
                     {"images", report.per_image.size()}};
    std::ofstream out(path, std::ios::binary);
    check(static_cast<bool>(out), "cannot write " + path.string());
    out << j.dump(2) << "\n";
}

}  // namespace fcbswin
