#include "kllab/svg.hpp"

#include <cstdio>

#include "kllab/errors.hpp"

namespace kllab::svg {

namespace {

std::string num(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", x);
    return buf;
}

}  // namespace

std::string escape(std::string_view text) {
    std::string out;
    for (char c : text) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

Document::Document(double width, double height) : width_(width), height_(height) {}

void Document::rect(double x, double y, double w, double h, std::string_view fill, std::string_view stroke) {
    body_ << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(w) << "\" height=\"" << num(h)
          << "\" fill=\"" << fill << "\" stroke=\"" << stroke << "\"/>\n";
}

void Document::line(double x1, double y1, double x2, double y2, std::string_view stroke, double width,
                    std::string_view dash) {
    body_ << "<line x1=\"" << num(x1) << "\" y1=\"" << num(y1) << "\" x2=\"" << num(x2) << "\" y2=\"" << num(y2)
          << "\" stroke=\"" << stroke << "\" stroke-width=\"" << num(width) << "\"";
    if (!dash.empty()) body_ << " stroke-dasharray=\"" << dash << "\"";
    body_ << "/>\n";
}

void Document::polyline(std::span<const double> xs, std::span<const double> ys, std::string_view stroke,
                        double width, std::string_view dash) {
    if (xs.size() != ys.size()) throw PreconditionViolation("polyline: coordinate count mismatch");
    body_ << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"" << num(width) << "\"";
    if (!dash.empty()) body_ << " stroke-dasharray=\"" << dash << "\"";
    body_ << " points=\"";
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) body_ << ' ';
        body_ << num(xs[i]) << ',' << num(ys[i]);
    }
    body_ << "\"/>\n";
}

void Document::text(double x, double y, std::string_view content, double size, std::string_view anchor) {
    body_ << "<text x=\"" << num(x) << "\" y=\"" << num(y) << "\" font-size=\"" << num(size)
          << "\" font-family=\"sans-serif\" text-anchor=\"" << anchor << "\">" << escape(content) << "</text>\n";
}

std::string Document::str() const {
    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width_) << "\" height=\"" << num(height_)
        << "\" viewBox=\"0 0 " << num(width_) << ' ' << num(height_) << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << body_.str();
    out << "</svg>\n";
    return out.str();
}

void axes(Document& doc, const Frame& f, std::string_view title) {
    const double bottom = f.top + f.height;
    doc.line(f.left, bottom, f.left + f.width, bottom, "#333");
    doc.line(f.left, f.top, f.left, bottom, "#333");
    doc.text(f.left + f.width / 2, f.top - 6, title, 11.0, "middle");
    doc.text(f.left - 4, bottom, num(f.y_min), 8.0, "end");
    doc.text(f.left - 4, f.top + 8, num(f.y_max), 8.0, "end");
    doc.text(f.left, bottom + 11, num(f.x_min), 8.0, "middle");
    doc.text(f.left + f.width, bottom + 11, num(f.x_max), 8.0, "middle");
}

}  // namespace kllab::svg
