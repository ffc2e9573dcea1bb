#pragma once

// Image file I/O. Decoding/encoding of PNG and TIFF (8- and 16-bit) is
// delegated to OpenCV's imgcodecs; everything else in this library works on
// plain RasterImage buffers. Channel order on disk follows OpenCV's BGR
// convention and is swapped to RGB here.

#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <string>

#include "mmreg/core.hpp"

namespace mmreg {

// Decode an 8- or 16-bit grayscale/RGB image, normalized to [0,1].
inline RasterImage load_image(const std::string& path) {
    cv::Mat m = cv::imread(path, cv::IMREAD_UNCHANGED);
    if (m.empty()) throw Error("cannot load image: " + path + " (unsupported or corrupt)");
    if (m.channels() == 4) {  // drop alpha
        cv::Mat bgr(m.rows, m.cols, CV_MAKETYPE(m.depth(), 3));
        const int from_to[] = {0, 0, 1, 1, 2, 2};
        cv::mixChannels(&m, 1, &bgr, 1, from_to, 3);
        m = bgr;
    }
    if (m.channels() != 1 && m.channels() != 3)
        throw Error("cannot load image: " + path + " (unsupported channel count " +
                    std::to_string(m.channels()) + ")");
    double denom;
    if (m.depth() == CV_8U)
        denom = 255.0;
    else if (m.depth() == CV_16U)
        denom = 65535.0;
    else
        throw Error("cannot load image: " + path + " (unsupported bit depth)");

    const int ch = m.channels();
    RasterImage img = RasterImage::zeros(m.cols, m.rows, ch);
    for (int y = 0; y < m.rows; ++y)
        for (int x = 0; x < m.cols; ++x) {
            double px[3];
            if (m.depth() == CV_8U) {
                const uchar* p = m.ptr<uchar>(y) + static_cast<size_t>(x) * ch;
                for (int c = 0; c < ch; ++c) px[c] = p[c] / denom;
            } else {
                const uint16_t* p = m.ptr<uint16_t>(y) + static_cast<size_t>(x) * ch;
                for (int c = 0; c < ch; ++c) px[c] = p[c] / denom;
            }
            float* out = &img.data[(static_cast<size_t>(y) * m.cols + x) * ch];
            if (ch == 3) {  // BGR -> RGB
                out[0] = static_cast<float>(px[2]);
                out[1] = static_cast<float>(px[1]);
                out[2] = static_cast<float>(px[0]);
            } else {
                out[0] = static_cast<float>(px[0]);
            }
        }
    return img;
}

// Encode to the container implied by the file extension (.png/.tif/.tiff),
// quantizing to the requested bit depth.
inline void save_image(const RasterImage& img, const std::string& path, int bit_depth = 8) {
    img.validate();
    if (bit_depth != 8 && bit_depth != 16)
        throw std::invalid_argument("save_image: bit depth must be 8 or 16");
    const int ch = img.channels;
    cv::Mat m(img.height, img.width, bit_depth == 8 ? CV_MAKETYPE(CV_8U, ch)
                                                    : CV_MAKETYPE(CV_16U, ch));
    const double scale = bit_depth == 8 ? 255.0 : 65535.0;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const float* in = &img.data[(static_cast<size_t>(y) * img.width + x) * ch];
            double px[3];
            if (ch == 3) {  // RGB -> BGR
                px[0] = in[2];
                px[1] = in[1];
                px[2] = in[0];
            } else {
                px[0] = in[0];
            }
            if (bit_depth == 8) {
                uchar* p = m.ptr<uchar>(y) + static_cast<size_t>(x) * ch;
                for (int c = 0; c < ch; ++c)
                    p[c] = static_cast<uchar>(std::lround(px[c] * scale));
            } else {
                uint16_t* p = m.ptr<uint16_t>(y) + static_cast<size_t>(x) * ch;
                for (int c = 0; c < ch; ++c)
                    p[c] = static_cast<uint16_t>(std::lround(px[c] * scale));
            }
        }
    if (!cv::imwrite(path, m)) throw Error("cannot save image: " + path);
}

}  // namespace mmreg
