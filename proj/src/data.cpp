#include "samlp/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "json.hpp"
#include "samlp/errors.hpp"

namespace samlp {

namespace fs = std::filesystem;

std::string to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw ValidationError("unknown split '" + s + "' (expected train, val, test)");
}

DatasetFormat format_from_string(const std::string& s) {
    if (s == "ufpr") return DatasetFormat::ufpr;
    if (s == "ccpd") return DatasetFormat::ccpd;
    if (s == "generic_json") return DatasetFormat::generic_json;
    throw ValidationError("unknown dataset format '" + s + "'");
}

CanvasTransform make_canvas_transform(std::int64_t width, std::int64_t height, std::int64_t canvas) {
    if (width <= 0 || height <= 0) throw ValidationError("preprocess: image has a zero dimension");
    CanvasTransform t;
    t.orig_w = width;
    t.orig_h = height;
    t.canvas = canvas;
    t.scale = static_cast<double>(canvas) / static_cast<double>(std::max(width, height));
    t.resized_w = std::min<std::int64_t>(canvas, std::llround(static_cast<double>(width) * t.scale));
    t.resized_h = std::min<std::int64_t>(canvas, std::llround(static_cast<double>(height) * t.scale));
    t.pad_right = canvas - t.resized_w;
    t.pad_bottom = canvas - t.resized_h;
    return t;
}

Preprocessed preprocess(const cv::Mat& rgb, std::int64_t canvas, const Normalization& norm) {
    if (rgb.empty() || rgb.cols == 0 || rgb.rows == 0) throw ValidationError("preprocess: empty image");
    if (rgb.type() != CV_8UC3) throw ValidationError("preprocess: expected an 8-bit 3-channel image");
    Preprocessed out;
    out.transform = make_canvas_transform(rgb.cols, rgb.rows, canvas);
    const auto& t = out.transform;

    cv::Mat resized;
    if (t.resized_w == rgb.cols && t.resized_h == rgb.rows)
        resized = rgb;
    else
        cv::resize(rgb, resized, cv::Size(static_cast<int>(t.resized_w), static_cast<int>(t.resized_h)), 0, 0,
                   cv::INTER_LINEAR);

    out.canvas = Tensor({3, canvas, canvas});
    auto& v = out.canvas.values();
    for (int y = 0; y < resized.rows; ++y) {
        const auto* row = resized.ptr<cv::Vec3b>(y);
        for (int x = 0; x < resized.cols; ++x)
            for (int c = 0; c < 3; ++c)
                v[static_cast<std::size_t>((c * canvas + y) * canvas + x)] =
                    (static_cast<float>(row[x][c]) - norm.mean[static_cast<std::size_t>(c)]) / norm.std[static_cast<std::size_t>(c)];
    }
    return out;
}

namespace {

cv::Rect pixel_rect(const Box& b, std::int64_t height, std::int64_t width) {
    const auto clampi = [](float v, std::int64_t hi) {
        return static_cast<int>(std::clamp<long long>(std::llround(v), 0, hi));
    };
    const int x1 = clampi(b.x1, width), x2 = clampi(b.x2, width);
    const int y1 = clampi(b.y1, height), y2 = clampi(b.y2, height);
    return {x1, y1, std::max(0, x2 - x1), std::max(0, y2 - y1)};
}

}  // namespace

cv::Mat boxes_to_mask(const std::vector<Box>& boxes, std::int64_t height, std::int64_t width) {
    cv::Mat mask = cv::Mat::zeros(static_cast<int>(height), static_cast<int>(width), CV_8UC1);
    for (const auto& b : boxes) {
        const auto r = pixel_rect(b, height, width);
        if (r.area() == 0) {
            std::cerr << "warning: dropping degenerate box (" << b.x1 << ", " << b.y1 << ", " << b.x2 << ", " << b.y2
                      << ")\n";
            continue;
        }
        mask(r).setTo(1);
    }
    return mask;
}

std::vector<Box> transform_boxes(const std::vector<Box>& boxes, const CanvasTransform& t) {
    std::vector<Box> out;
    out.reserve(boxes.size());
    const auto s = static_cast<float>(t.scale);
    for (const auto& b : boxes) out.push_back({b.x1 * s, b.y1 * s, b.x2 * s, b.y2 * s});
    return out;
}

std::vector<Box> untransform_boxes(const std::vector<Box>& boxes, const CanvasTransform& t) {
    std::vector<Box> out;
    out.reserve(boxes.size());
    const double inv = 1.0 / t.scale;
    auto f = [&](float v, std::int64_t hi) {
        return static_cast<float>(std::clamp(static_cast<double>(v) * inv, 0.0, static_cast<double>(hi)));
    };
    for (const auto& b : boxes) out.push_back({f(b.x1, t.orig_w), f(b.y1, t.orig_h), f(b.x2, t.orig_w), f(b.y2, t.orig_h)});
    return out;
}

cv::Mat untransform_mask(const cv::Mat& canvas_mask, const CanvasTransform& t) {
    const cv::Mat content = canvas_mask(cv::Rect(0, 0, static_cast<int>(t.resized_w), static_cast<int>(t.resized_h)));
    cv::Mat out;
    cv::resize(content, out, cv::Size(static_cast<int>(t.orig_w), static_cast<int>(t.orig_h)), 0, 0, cv::INTER_NEAREST);
    return out;
}

cv::Mat quad_to_mask(const std::vector<std::array<cv::Point2f, 4>>& quads, std::int64_t height, std::int64_t width) {
    cv::Mat mask = cv::Mat::zeros(static_cast<int>(height), static_cast<int>(width), CV_8UC1);
    for (const auto& q : quads) {
        std::vector<cv::Point> pts;
        for (const auto& p : q) pts.emplace_back(static_cast<int>(std::lround(p.x)), static_cast<int>(std::lround(p.y)));
        cv::fillConvexPoly(mask, pts, cv::Scalar(1));
    }
    return mask;
}

std::vector<float> downsample_mask(const cv::Mat& mask, std::int64_t size) {
    cv::Mat f, small;
    mask.convertTo(f, CV_32F);
    cv::resize(f, small, cv::Size(static_cast<int>(size), static_cast<int>(size)), 0, 0, cv::INTER_AREA);
    std::vector<float> out(static_cast<std::size_t>(size * size));
    for (int y = 0; y < small.rows; ++y)
        for (int x = 0; x < small.cols; ++x)
            out[static_cast<std::size_t>(y * size + x)] = small.at<float>(y, x) > 0.5f ? 1.0f : 0.0f;
    return out;
}

cv::Mat read_rgb(const fs::path& path) {
    cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) throw ValidationError("cannot read image '" + path.string() + "'");
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    return rgb;
}

void write_rgb(const fs::path& path, const cv::Mat& rgb) {
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), bgr)) throw std::runtime_error("cannot write image '" + path.string() + "'");
}

namespace {

void check_boxes_in_bounds(const std::vector<Box>& boxes, const cv::Mat& img) {
    for (const auto& b : boxes)
        if (b.x1 < 0 || b.y1 < 0 || b.x2 > static_cast<float>(img.cols) || b.y2 > static_cast<float>(img.rows) ||
            b.x2 <= b.x1 || b.y2 <= b.y1)
            throw ValidationError("box outside image bounds or degenerate");
}

Sample make_sample(cv::Mat img, std::vector<Box> boxes, std::string id, Split split) {
    check_boxes_in_bounds(boxes, img);
    Sample s;
    s.gt_mask = boxes_to_mask(boxes, img.rows, img.cols);
    s.image = std::move(img);
    s.gt_boxes = std::move(boxes);
    s.source_id = std::move(id);
    s.split = split;
    return s;
}

void load_generic_json(const fs::path& root, DatasetLoad& out) {
    const fs::path ann = fs::is_directory(root) ? root / "annotations.json" : root;
    const fs::path base = ann.parent_path();
    std::ifstream is(ann);
    if (!is) throw ValidationError("cannot open '" + ann.string() + "'");
    const auto doc = nlohmann::json::parse(is);
    for (const auto& e : doc.at("images")) {
        const auto file = e.value("file", std::string{});
        try {
            std::vector<Box> boxes;
            for (const auto& b : e.at("boxes")) {
                if (b.size() != 4) throw ValidationError("box must have 4 coordinates");
                boxes.push_back({b[0].get<float>(), b[1].get<float>(), b[2].get<float>(), b[3].get<float>()});
            }
            const auto split = split_from_string(e.value("split", std::string{"train"}));
            out.samples.push_back(make_sample(read_rgb(base / file), std::move(boxes), file, split));
        } catch (const std::exception& ex) {
            out.errors.push_back(file + ": " + ex.what());
        }
    }
}

Split split_from_path(const fs::path& p, Split fallback) {
    for (const auto& part : p) {
        const auto s = part.string();
        if (s == "training" || s == "train") return Split::train;
        if (s == "validation" || s == "val") return Split::val;
        if (s == "testing" || s == "test") return Split::test;
    }
    return fallback;
}

std::vector<fs::path> sorted_files(const fs::path& root, const std::vector<std::string>& exts) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (!e.is_regular_file()) continue;
        const auto ext = e.path().extension().string();
        if (std::find(exts.begin(), exts.end(), ext) != exts.end()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    return files;
}

void load_ufpr(const fs::path& root, const LoadOptions& opt, DatasetLoad& out) {
    for (const auto& txt : sorted_files(root, {".txt"})) {
        const auto rel = fs::relative(txt, root);
        try {
            fs::path image_path;
            for (const char* ext : {".png", ".jpg", ".jpeg"}) {
                auto candidate = txt;
                candidate.replace_extension(ext);
                if (fs::exists(candidate)) {
                    image_path = candidate;
                    break;
                }
            }
            if (image_path.empty()) throw ValidationError("no image next to annotation");
            std::ifstream is(txt);
            std::string line;
            std::vector<Box> boxes;
            std::vector<std::array<cv::Point2f, 4>> quads;
            while (std::getline(is, line)) {
                const auto colon = line.find(':');
                if (colon == std::string::npos) continue;
                auto key = line.substr(0, colon);
                key.erase(0, key.find_first_not_of(" \t"));
                std::istringstream vs(line.substr(colon + 1));
                if (key == "position_plate") {
                    float x, y, w, h;
                    if (!(vs >> x >> y >> w >> h)) throw ValidationError("malformed position_plate");
                    boxes.push_back({x, y, x + w, y + h});
                } else if (key == "corners") {
                    std::array<cv::Point2f, 4> q;
                    for (auto& p : q) {
                        char comma;
                        if (!(vs >> p.x >> comma >> p.y) || comma != ',') throw ValidationError("malformed corners");
                    }
                    quads.push_back(q);
                }
            }
            if (boxes.empty()) throw ValidationError("no position_plate entry");
            auto sample = make_sample(read_rgb(image_path), boxes, rel.string(), split_from_path(rel, Split::train));
            if (opt.ufpr_corner_masks && quads.size() == boxes.size())
                sample.gt_mask = quad_to_mask(quads, sample.image.rows, sample.image.cols);
            out.samples.push_back(std::move(sample));
        } catch (const std::exception& ex) {
            out.errors.push_back(rel.string() + ": " + ex.what());
        }
    }
}

std::map<std::string, Split> ccpd_split_lists(const fs::path& root) {
    std::map<std::string, Split> m;
    for (auto split : {Split::train, Split::val, Split::test}) {
        std::ifstream is(root / "splits" / (to_string(split) + ".txt"));
        std::string line;
        while (std::getline(is, line))
            if (!line.empty()) m[fs::path(line).filename().string()] = split;
    }
    return m;
}

void load_ccpd(const fs::path& root, DatasetLoad& out) {
    const auto lists = ccpd_split_lists(root);
    for (const auto& img : sorted_files(root, {".jpg", ".jpeg", ".png"})) {
        const auto rel = fs::relative(img, root);
        try {
            const auto box = parse_ccpd_filename(img.stem().string());
            const auto it = lists.find(img.filename().string());
            const auto split = it != lists.end() ? it->second : split_from_path(rel, Split::train);
            out.samples.push_back(make_sample(read_rgb(img), {box}, rel.string(), split));
        } catch (const std::exception& ex) {
            out.errors.push_back(rel.string() + ": " + ex.what());
        }
    }
}

std::vector<std::string> split_on(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::string cur;
    std::istringstream is(s);
    while (std::getline(is, cur, sep)) parts.push_back(cur);
    return parts;
}

cv::Point2f parse_ccpd_point(const std::string& s) {
    const auto xy = split_on(s, '&');
    if (xy.size() != 2) throw ValidationError("malformed CCPD point '" + s + "'");
    return {std::stof(xy[0]), std::stof(xy[1])};
}

}  // namespace

Box parse_ccpd_filename(const std::string& stem) {
    const auto fields = split_on(stem, '-');
    if (fields.size() < 4) throw ValidationError("CCPD name '" + stem + "' has too few fields");
    try {
        const auto corners = split_on(fields[2], '_');
        if (corners.size() != 2) throw ValidationError("malformed CCPD box field");
        const auto tl = parse_ccpd_point(corners[0]);
        const auto br = parse_ccpd_point(corners[1]);
        const auto verts = split_on(fields[3], '_');
        if (verts.size() != 4) throw ValidationError("malformed CCPD vertex field");
        for (const auto& v : verts) {
            const auto p = parse_ccpd_point(v);
            if (p.x < tl.x || p.x > br.x || p.y < tl.y || p.y > br.y)
                throw ValidationError("CCPD vertex outside the encoded bounding box");
        }
        if (br.x <= tl.x || br.y <= tl.y) throw ValidationError("degenerate CCPD box");
        return {tl.x, tl.y, br.x, br.y};
    } catch (const std::invalid_argument& ex) {
        throw ValidationError("CCPD name '" + stem + "': " + ex.what());
    }
}

DatasetLoad load_dataset(const fs::path& root, DatasetFormat format, const LoadOptions& options) {
    if (!fs::exists(root)) throw ValidationError("dataset root '" + root.string() + "' does not exist");
    DatasetLoad out;
    switch (format) {
        case DatasetFormat::generic_json: load_generic_json(root, out); break;
        case DatasetFormat::ufpr: load_ufpr(root, options, out); break;
        case DatasetFormat::ccpd: load_ccpd(root, out); break;
    }
    if (!out.errors.empty())
        std::cerr << "warning: " << out.errors.size() << " of " << (out.errors.size() + out.samples.size())
                  << " annotation files could not be loaded\n";
    return out;
}

namespace {

cv::Vec3b clamp_px(float r, float g, float b) {
    auto c = [](float v) { return static_cast<uchar>(std::clamp(std::lround(v), 0L, 255L)); };
    return {c(r), c(g), c(b)};
}

bool overlaps(const Box& a, const Box& b, float margin) {
    return a.x1 < b.x2 + margin && b.x1 < a.x2 + margin && a.y1 < b.y2 + margin && b.y1 < a.y2 + margin;
}

}  // namespace

std::vector<Sample> synthesize_dataset(std::int64_t n, std::uint64_t seed, const SynthConfig& cfg) {
    if (n < 1) throw ValidationError("synthesize_dataset: n must be >= 1");
    if (cfg.min_plates < 1 || cfg.max_plates < cfg.min_plates) throw ValidationError("synthesize_dataset: bad plate range");
    const int w = static_cast<int>(cfg.width), h = static_cast<int>(cfg.height);
    if (w < 120 || h < 60) throw ValidationError("synthesize_dataset: image too small for plates");

    std::mt19937_64 rng(seed);
    auto uni = [&](float a, float b) { return std::uniform_real_distribution<float>(a, b)(rng); };
    auto uint = [&](int a, int b) { return std::uniform_int_distribution<int>(a, b)(rng); };
    std::normal_distribution<float> noise(0.0f, 1.0f);
    // Draws are sequenced one by one so the stream never depends on argument evaluation order.
    auto colour = [&](int r0, int r1, int g0, int g1, int b0, int b1) {
        const int r = uint(r0, r1);
        const int g = uint(g0, g1);
        const int b = uint(b0, b1);
        return cv::Scalar(r, g, b);
    };

    std::vector<Sample> out;
    for (std::int64_t i = 0; i < n; ++i) {
        cv::Mat img(h, w, CV_8UC3);
        // Road-like background: vertical gradient, tint and pixel noise.
        const float base = uni(70.0f, 130.0f), grad = uni(-40.0f, 40.0f);
        const float tr = uni(-10.0f, 10.0f), tg = uni(-10.0f, 10.0f), tb = uni(-10.0f, 10.0f);
        for (int y = 0; y < h; ++y) {
            const float g = base + grad * (static_cast<float>(y) / static_cast<float>(h) - 0.5f);
            auto* row = img.ptr<cv::Vec3b>(y);
            for (int x = 0; x < w; ++x) {
                const float nz = 10.0f * noise(rng);
                row[x] = clamp_px(g + tr + nz, g + tg + nz, g + tb + nz);
            }
        }
        // Vehicle-body and lane-marking distractors.
        for (int k = 0, nb = uint(1, 3); k < nb; ++k) {
            const int bw = uint(w / 4, w / 2), bh = uint(h / 5, h / 2);
            const int bx = uint(0, w - bw), by = uint(0, h - bh);
            cv::rectangle(img, cv::Rect(bx, by, bw, bh), colour(20, 200, 20, 200, 20, 200), cv::FILLED);
        }
        for (int k = 0, nl = uint(0, 2); k < nl; ++k) {
            const int lv = uint(170, 220);
            const int top = uint(0, w - 1), bottom = uint(0, w - 1);
            cv::line(img, {top, 0}, {bottom, h - 1}, cv::Scalar(lv, lv, lv), 2);
        }

        std::vector<Box> boxes;
        const int want = uint(cfg.min_plates, cfg.max_plates);
        for (int attempt = 0; attempt < 500 && static_cast<int>(boxes.size()) < want; ++attempt) {
            const int pw = uint(std::max(40, w / 7), std::max(48, w / 4));
            const int ph = std::max(12, static_cast<int>(std::lround(static_cast<float>(pw) * uni(0.28f, 0.4f))));
            if (pw + 4 > w || ph + 4 > h) continue;
            const int x = uint(2, w - pw - 2), y = uint(2, h - ph - 2);
            const Box b{static_cast<float>(x), static_cast<float>(y), static_cast<float>(x + pw), static_cast<float>(y + ph)};
            if (std::any_of(boxes.begin(), boxes.end(), [&](const Box& o) { return overlaps(b, o, 4.0f); })) continue;
            boxes.push_back(b);

            const bool yellow = uni(0.0f, 1.0f) < 0.3f;
            const cv::Scalar fill = yellow ? colour(220, 250, 190, 220, 20, 60) : colour(225, 255, 225, 255, 225, 255);
            const cv::Scalar ink = colour(0, 40, 0, 40, 0, 40);
            const cv::Rect r(x, y, pw, ph);
            cv::rectangle(img, r, fill, cv::FILLED);
            cv::rectangle(img, r, ink, 2);
            // Glyph-like strokes: a row of dark character cells.
            const int glyphs = uint(5, 7);
            const float cell = static_cast<float>(pw - 8) / static_cast<float>(glyphs);
            for (int g = 0; g < glyphs; ++g) {
                const int gx = x + 4 + static_cast<int>(std::lround(cell * static_cast<float>(g)));
                const int gw = std::max(2, static_cast<int>(cell * 0.6f));
                const int gy = y + ph / 4, gh = std::max(3, ph / 2);
                cv::rectangle(img, cv::Rect(gx, gy, gw, gh), ink, cv::FILLED);
                const int cut = uint(0, 2);
                if (cut > 0)
                    cv::rectangle(img, cv::Rect(gx + 1, gy + gh / 3 + cut, std::max(1, gw - 2), std::max(1, gh / 4)), fill,
                                  cv::FILLED);
            }
        }

        char id[48];
        std::snprintf(id, sizeof(id), "synth_%s_%05lld", to_string(cfg.split).c_str(), static_cast<long long>(i));
        out.push_back(make_sample(img, std::move(boxes), id, cfg.split));
    }
    return out;
}

void write_generic_json(const fs::path& dir, const std::vector<Sample>& samples) {
    fs::create_directories(dir / "images");
    auto images = nlohmann::json::array();
    for (const auto& s : samples) {
        const auto file = "images/" + fs::path(s.source_id).stem().string() + ".png";
        write_rgb(dir / file, s.image);
        auto boxes = nlohmann::json::array();
        for (const auto& b : s.gt_boxes) boxes.push_back({b.x1, b.y1, b.x2, b.y2});
        images.push_back({{"file", file}, {"boxes", boxes}, {"split", to_string(s.split)}});
    }
    std::ofstream os(dir / "annotations.json");
    if (!os) throw std::runtime_error("cannot write annotations in '" + dir.string() + "'");
    os << nlohmann::json{{"images", images}}.dump(2) << '\n';
}

}  // namespace samlp
