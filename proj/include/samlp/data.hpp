#pragma once

// Canvas preprocessing, ground-truth rasterisation, dataset adapters and a
// synthetic plate-scene generator.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "samlp/tensor.hpp"

namespace samlp {

/// Axis-aligned box in pixels, half-open: covers [x1, x2) x [y1, y2).
struct Box {
    float x1 = 0.0f, y1 = 0.0f, x2 = 0.0f, y2 = 0.0f;

    float width() const { return x2 - x1; }
    float height() const { return y2 - y1; }
    float area() const { return width() > 0.0f && height() > 0.0f ? width() * height() : 0.0f; }
    bool operator==(const Box&) const = default;
};

enum class Split { train, val, test };

std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct Sample {
    cv::Mat image;    // CV_8UC3, RGB
    std::vector<Box> gt_boxes;
    cv::Mat gt_mask;  // CV_8UC1, 0/1, same size as image
    std::string source_id;
    Split split = Split::train;
};

struct CanvasTransform {
    double scale = 1.0;
    std::int64_t orig_w = 0, orig_h = 0;
    std::int64_t resized_w = 0, resized_h = 0;
    std::int64_t pad_right = 0, pad_bottom = 0;
    std::int64_t canvas = 1024;
};

struct Normalization {
    std::array<float, 3> mean{123.675f, 116.28f, 103.53f};
    std::array<float, 3> std{58.395f, 57.12f, 57.375f};
};

struct Preprocessed {
    Tensor canvas;  // [3 x S x S]
    CanvasTransform transform;
};

/// Computes the long-side resize onto a square canvas without touching pixels.
CanvasTransform make_canvas_transform(std::int64_t width, std::int64_t height, std::int64_t canvas);

/// Bilinear long-side resize to `canvas`, per-channel normalisation, then
/// zero padding on the right/bottom (padding is exactly 0 after normalising).
Preprocessed preprocess(const cv::Mat& rgb, std::int64_t canvas, const Normalization& norm = {});

/// Pixel (x, y) is 1 iff it lies inside any box. Degenerate boxes are dropped
/// with a warning; coordinates are clipped to the image.
cv::Mat boxes_to_mask(const std::vector<Box>& boxes, std::int64_t height, std::int64_t width);

std::vector<Box> transform_boxes(const std::vector<Box>& boxes, const CanvasTransform& t);
std::vector<Box> untransform_boxes(const std::vector<Box>& boxes, const CanvasTransform& t);

/// Crops the content region of a canvas mask and resamples it (nearest) to
/// the original resolution.
cv::Mat untransform_mask(const cv::Mat& canvas_mask, const CanvasTransform& t);

/// Fills the quadrilateral given by four corners (UFPR corner annotations).
cv::Mat quad_to_mask(const std::vector<std::array<cv::Point2f, 4>>& quads, std::int64_t height, std::int64_t width);

/// Area-average downsample of a 0/1 mask to size x size, thresholded at 0.5.
std::vector<float> downsample_mask(const cv::Mat& mask, std::int64_t size);

enum class DatasetFormat { ufpr, ccpd, generic_json };

DatasetFormat format_from_string(const std::string& s);

struct LoadOptions {
    /// UFPR only: rasterise the annotated corner quadrilateral instead of the box.
    bool ufpr_corner_masks = false;
};

struct DatasetLoad {
    std::vector<Sample> samples;
    std::vector<std::string> errors;  // one entry per file that could not be used
};

/// Reads a dataset in one of the supported layouts. Per-file problems are
/// collected in `errors` rather than aborting. Throws if `root` is missing.
DatasetLoad load_dataset(const std::filesystem::path& root, DatasetFormat format, const LoadOptions& options = {});

/// CCPD encodes annotations in the file stem; returns the bounding box field
/// (and checks it against the four vertices). Throws ValidationError on malformed names.
Box parse_ccpd_filename(const std::string& stem);

struct SynthConfig {
    std::int64_t width = 320;
    std::int64_t height = 240;
    int min_plates = 1;
    int max_plates = 3;
    Split split = Split::train;
};

/// Road-like noisy backgrounds with 1..3 bordered, glyph-textured light
/// rectangles. Boxes never overlap and are at least 4 px apart.
std::vector<Sample> synthesize_dataset(std::int64_t n, std::uint64_t seed, const SynthConfig& cfg = {});

/// Writes PNG images plus annotations.json in the generic_json schema.
void write_generic_json(const std::filesystem::path& dir, const std::vector<Sample>& samples);

cv::Mat read_rgb(const std::filesystem::path& path);
void write_rgb(const std::filesystem::path& path, const cv::Mat& rgb);

}  // namespace samlp
