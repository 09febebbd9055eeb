#pragma once

#include <filesystem>
#include <string>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "fcbswin/common.hpp"
#include "fcbswin/tensor.hpp"

namespace fcbswin {

/// Decodes an image file to HxWx3 RGB floats in [0,1].
template <typename T>
Tensor<T> load_image(const std::filesystem::path& path) {
    cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    check(!bgr.empty(), "cannot read image " + path.string());
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    Tensor<T> out({rgb.rows, rgb.cols, 3});
    for (int y = 0; y < rgb.rows; ++y) {
        const uint8_t* row = rgb.ptr<uint8_t>(y);
        for (int x = 0; x < rgb.cols * 3; ++x)
            out.data[static_cast<int64_t>(y) * rgb.cols * 3 + x] =
                static_cast<T>(row[x]) / static_cast<T>(255);
    }
    return out;
}

/// Decodes a mask file to an HxW binary tensor (threshold at mid-gray).
template <typename T>
Tensor<T> load_mask(const std::filesystem::path& path) {
    cv::Mat gray = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
    check(!gray.empty(), "cannot read mask " + path.string());
    Tensor<T> out({gray.rows, gray.cols});
    for (int y = 0; y < gray.rows; ++y) {
        const uint8_t* row = gray.ptr<uint8_t>(y);
        for (int x = 0; x < gray.cols; ++x)
            out.data[static_cast<int64_t>(y) * gray.cols + x] = row[x] > 127 ? T(1) : T(0);
    }
    return out;
}

/// Writes an HxW binary mask as an 8-bit PNG with values {0, 255}.
template <typename T>
void save_mask(const Tensor<T>& mask, const std::filesystem::path& path) {
    check(mask.shape.size() == 2, "save_mask expects an HxW tensor");
    cv::Mat img(static_cast<int>(mask.shape[0]), static_cast<int>(mask.shape[1]), CV_8UC1);
    for (int y = 0; y < img.rows; ++y) {
        uint8_t* row = img.ptr<uint8_t>(y);
        for (int x = 0; x < img.cols; ++x)
            row[x] = mask.data[static_cast<int64_t>(y) * img.cols + x] != T(0) ? 255 : 0;
    }
    check(cv::imwrite(path.string(), img), "cannot write " + path.string());
}

}  // namespace fcbswin
