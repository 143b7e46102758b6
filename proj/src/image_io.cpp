#include "camoseg/image_io.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/imgcodecs.hpp>

#include "camoseg/errors.hpp"
#include "camoseg/kernels.hpp"

namespace camoseg::io {

Tensor read_image(const std::string& path) {
    cv::Mat m = cv::imread(path, cv::IMREAD_COLOR);
    if (m.empty()) throw DataError("cannot read image: " + path);
    Tensor t({3, m.rows, m.cols});
    for (int y = 0; y < m.rows; ++y)
        for (int x = 0; x < m.cols; ++x) {
            const auto& px = m.at<cv::Vec3b>(y, x);  // BGR
            t.at(0, y, x) = px[2] / 255.0;
            t.at(1, y, x) = px[1] / 255.0;
            t.at(2, y, x) = px[0] / 255.0;
        }
    return t;
}

void write_image(const std::string& path, const Tensor& image) {
    if (image.rank() != 3) throw ShapeError("write_image: expected [C,H,W]");
    const int64_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    cv::Mat m(static_cast<int>(h), static_cast<int>(w), CV_8UC3);
    auto to8 = [](double v) { return static_cast<unsigned char>(std::clamp(std::lround(v * 255.0), 0L, 255L)); };
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            cv::Vec3b px;
            if (c >= 3) {
                px = {to8(image.at(2, y, x)), to8(image.at(1, y, x)), to8(image.at(0, y, x))};
            } else {
                const auto g = to8(image.at(0, y, x));
                px = {g, g, g};
            }
            m.at<cv::Vec3b>(static_cast<int>(y), static_cast<int>(x)) = px;
        }
    if (!cv::imwrite(path, m)) throw DataError("cannot write image: " + path);
}

void write_gray(const std::string& path, const Tensor& map2d) {
    if (map2d.rank() != 2) throw ShapeError("write_gray: expected [H,W]");
    double lo = map2d[0], hi = map2d[0];
    for (int64_t i = 0; i < map2d.size(); ++i) {
        lo = std::min(lo, map2d[i]);
        hi = std::max(hi, map2d[i]);
    }
    const double span = hi - lo;
    Tensor img({1, map2d.dim(0), map2d.dim(1)});
    for (int64_t i = 0; i < map2d.size(); ++i) img[i] = span > 0 ? (map2d[i] - lo) / span : 0.0;
    write_image(path, img);
}

Tensor resize_image(const Tensor& image, int64_t h, int64_t w) {
    if (image.rank() != 3) throw ShapeError("resize_image: expected [C,H,W]");
    Tensor out({image.dim(0), h, w});
    kernels::bilinear_resize(image.data(), out.data(), image.dim(0), image.dim(1), image.dim(2), h, w);
    return out;
}

Tensor resize_mask_nearest(const Tensor& mask, int64_t h, int64_t w) {
    if (mask.rank() != 2) throw ShapeError("resize_mask_nearest: expected [H,W]");
    const int64_t hi = mask.dim(0), wi = mask.dim(1);
    Tensor out({h, w});
    for (int64_t y = 0; y < h; ++y) {
        int64_t sy = std::clamp<int64_t>(static_cast<int64_t>((y + 0.5) * hi / h), 0, hi - 1);
        for (int64_t x = 0; x < w; ++x) {
            int64_t sx = std::clamp<int64_t>(static_cast<int64_t>((x + 0.5) * wi / w), 0, wi - 1);
            out.at(y, x) = mask.at(sy, sx);
        }
    }
    return out;
}

}  // namespace camoseg::io
