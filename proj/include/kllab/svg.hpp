#pragma once

#include <span>
#include <sstream>
#include <string>
#include <string_view>

namespace kllab::svg {

// Minimal SVG writer. Coordinates are printed with two decimals so output is
// byte-stable across runs.
class Document {
public:
    Document(double width, double height);

    void rect(double x, double y, double w, double h, std::string_view fill, std::string_view stroke = "none");
    void line(double x1, double y1, double x2, double y2, std::string_view stroke, double width = 1.0,
              std::string_view dash = {});
    void polyline(std::span<const double> xs, std::span<const double> ys, std::string_view stroke, double width = 1.5,
                  std::string_view dash = {});
    void text(double x, double y, std::string_view content, double size = 11.0, std::string_view anchor = "start");

    std::string str() const;

private:
    double width_;
    double height_;
    std::ostringstream body_;
};

// Plot area mapping data coordinates to pixels.
struct Frame {
    double left, top, width, height;
    double x_min, x_max, y_min, y_max;

    double px(double x) const { return left + (x - x_min) / (x_max - x_min) * width; }
    double py(double y) const { return top + height - (y - y_min) / (y_max - y_min) * height; }
};

void axes(Document& doc, const Frame& f, std::string_view title);

std::string escape(std::string_view text);

}  // namespace kllab::svg
