#include "ad2/image_io.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

namespace ad2 {

Image load_image(const std::string& path) {
    cv::Mat m = cv::imread(path, cv::IMREAD_COLOR);
    if (m.empty()) throw IoError("cannot decode image: " + path);
    Image img(m.rows, m.cols, 3);
    for (int y = 0; y < m.rows; ++y) {
        const cv::Vec3b* row = m.ptr<cv::Vec3b>(y);
        for (int x = 0; x < m.cols; ++x) {
            // BGR on disk, RGB in memory
            img.at(y, x, 0) = row[x][2] / 255.0f;
            img.at(y, x, 1) = row[x][1] / 255.0f;
            img.at(y, x, 2) = row[x][0] / 255.0f;
        }
    }
    return img;
}

void save_image(const std::string& path, const Image& img) {
    if (img.rank() != 3 || img.c() != 3) throw InvalidInput("save_image: expected [H][W][3]");
    cv::Mat m(img.h(), img.w(), CV_8UC3);
    for (int y = 0; y < img.h(); ++y) {
        cv::Vec3b* row = m.ptr<cv::Vec3b>(y);
        for (int x = 0; x < img.w(); ++x) {
            auto q = [&](int c) {
                const float v = std::min(1.0f, std::max(0.0f, img.at(y, x, c)));
                return static_cast<unsigned char>(v * 255.0f + 0.5f);
            };
            row[x] = cv::Vec3b(q(2), q(1), q(0));
        }
    }
    if (!cv::imwrite(path, m)) throw IoError("cannot write image: " + path);
}

void save_gray(const std::string& path, const Tensor<float>& map) {
    if (map.rank() != 3 || map.c() != 1) throw InvalidInput("save_gray: expected [H][W][1]");
    cv::Mat m(map.h(), map.w(), CV_8UC1);
    for (int y = 0; y < map.h(); ++y) {
        unsigned char* row = m.ptr<unsigned char>(y);
        for (int x = 0; x < map.w(); ++x) {
            const float v = std::min(1.0f, std::max(0.0f, map.at(y, x, 0)));
            row[x] = static_cast<unsigned char>(v * 255.0f + 0.5f);
        }
    }
    if (!cv::imwrite(path, m)) throw IoError("cannot write image: " + path);
}

}  // namespace ad2
