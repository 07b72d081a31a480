#include "dnd/heatmap.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "dnd/corpus.hpp"

namespace dnd {

namespace {

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos && !s.empty() && s.front() != ' ' && s.back() != ' ') return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::string html_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
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

// Light orange for the first DND layer through dark red for the last.
std::string depth_colour(std::size_t slot, std::size_t slots) {
    const double t = slots > 1 ? static_cast<double>(slot) / static_cast<double>(slots - 1) : 1.0;
    const int r = static_cast<int>(255 - t * (255 - 139));
    const int g = static_cast<int>(200 - t * 200);
    const int b = static_cast<int>(120 - t * 120);
    char buf[16];
    std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", r, g, b);
    return buf;
}

}  // namespace

HeatmapExport build_heatmap(const TransformerModel& model, std::string_view text) {
    if (text.empty()) throw ContractError("heatmap: text must be non-empty");
    const auto ids = tokenize(text);
    HeatmapExport h;
    for (auto id : ids) h.tokens.push_back(token_display(id));
    for (std::size_t l = 0; l < model.dnd().layer_count(); ++l) h.layers.push_back(model.dnd().l_start + l);
    h.cells.resize(ids.size() * h.layers.size());

    NoGradGuard no_grad;
    const std::size_t chunk = model.config().max_seq_len;
    for (std::size_t start = 0; start < ids.size(); start += chunk) {
        const std::size_t len = std::min(chunk, ids.size() - start);
        std::span<const std::int64_t> window(ids.data() + start, len);
        ForwardResult fr = model.forward(window, 1, len);
        for (std::size_t slot = 0; slot < fr.traces.size(); ++slot) {
            const auto& mask = fr.traces[slot].mask;
            for (std::size_t i = 0; i < len; ++i) {
                auto& cell = h.cells[(start + i) * h.layers.size() + slot];
                cell.token_index = start + i;
                cell.token = h.tokens[start + i];
                cell.layer = h.layers[slot];
                cell.p = mask.probs[i];
                cell.selected = mask.mask[i] != 0;
            }
        }
    }
    return h;
}

std::string heatmap_csv(const HeatmapExport& h) {
    std::ostringstream out;
    out.precision(17);
    out << "token_index,token,layer,p,selected\n";
    for (const auto& c : h.cells) {
        out << c.token_index << ',' << csv_field(c.token) << ',' << c.layer << ',' << c.p << ',' << (c.selected ? 1 : 0)
            << '\n';
    }
    return out.str();
}

std::string heatmap_html(const HeatmapExport& h) {
    std::ostringstream out;
    const std::size_t slots = h.layers.size();
    out << "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>Token selection heatmap</title>\n"
        << "<style>body{font-family:monospace;margin:2em}span.t{white-space:pre;padding:1px 0}"
        << "h2{font-size:1em;margin:1.2em 0 .3em}.legend span{padding:2px 6px;margin-right:4px}</style>"
        << "</head><body>\n<h1>Token selection heatmap</h1>\n<div class=\"legend\">";
    for (std::size_t s = 0; s < slots; ++s) {
        out << "<span style=\"background:" << depth_colour(s, slots) << ";color:" << (s * 2 >= slots ? "#fff" : "#000")
            << "\">layer " << h.layers[s] << "</span>";
    }
    out << "</div>\n";

    // Summary line: each token takes the colour of the deepest layer that selected it.
    out << "<h2>deepest selecting layer</h2>\n<p>";
    for (std::size_t t = 0; t < h.tokens.size(); ++t) {
        std::ptrdiff_t deepest = -1;
        for (std::size_t s = 0; s < slots; ++s)
            if (h.at(t, s).selected) deepest = static_cast<std::ptrdiff_t>(s);
        out << "<span class=\"t\"";
        if (deepest >= 0) {
            const auto s = static_cast<std::size_t>(deepest);
            out << " style=\"background:" << depth_colour(s, slots) << ";color:" << (s * 2 >= slots ? "#fff" : "#000")
                << "\"";
        }
        out << ">" << html_escape(h.tokens[t]) << "</span>";
    }
    out << "</p>\n";

    for (std::size_t s = 0; s < slots; ++s) {
        out << "<h2>layer " << h.layers[s] << "</h2>\n<p>";
        for (std::size_t t = 0; t < h.tokens.size(); ++t) {
            const auto& c = h.at(t, s);
            char title[48];
            std::snprintf(title, sizeof(title), "p=%.4f", c.p);
            out << "<span class=\"t\" title=\"" << title << "\"";
            if (c.selected) out << " style=\"background:" << depth_colour(s, slots) << ";color:" << (s * 2 >= slots ? "#fff" : "#000") << "\"";
            out << ">" << html_escape(c.token) << "</span>";
        }
        out << "</p>\n";
    }
    out << "</body></html>\n";
    return out.str();
}

}  // namespace dnd
