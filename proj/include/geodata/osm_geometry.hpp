#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "geodata/errors.hpp"

// Overpass JSON parsing and relation-to-multipolygon assembly. Relations
// arrive as loose way members tagged "outer"/"inner"; ways are merged at
// shared endpoints into rings, inner rings become holes of the outer ring
// that contains them. Coordinates are WGS84 lon/lat throughout.

namespace geodata::osm {

struct LonLat {
    double lon = 0.0;
    double lat = 0.0;
    friend bool operator==(const LonLat& a, const LonLat& b) {
        return a.lon == b.lon && a.lat == b.lat;
    }
};

enum class ElementKind { node, way, relation };

inline const char* to_string(ElementKind k) {
    switch (k) {
    case ElementKind::node: return "node";
    case ElementKind::way: return "way";
    default: return "relation";
    }
}

struct RelationMember {
    ElementKind kind = ElementKind::way;
    std::string role;
    std::vector<LonLat> geometry;
};

struct OsmElement {
    long long id = 0;
    ElementKind kind = ElementKind::node;
    nlohmann::json tags = nlohmann::json::object();
    std::vector<LonLat> geometry;       // node: exactly 1 point, way: >= 2
    std::optional<LonLat> center;       // present for `out center;` replies
    std::vector<RelationMember> members;
};

struct PathChain {
    std::vector<LonLat> points;
    bool closed() const {
        return points.size() >= 2 && points.front() == points.back();
    }
};

// Closed ring: front() == back().
using Ring = std::vector<LonLat>;

struct PolygonWithHoles {
    Ring outer;
    std::vector<Ring> holes;
};

struct MultiPolygonGeom {
    std::vector<PolygonWithHoles> polygons;
    // Non-fatal assembly anomalies (unclosed ways, orphan inner rings).
    // Invalid OSM relations are passed through best-effort rather than
    // rejected, matching how downstream consumers treat them.
    std::vector<std::string> warnings;
};

struct FeatureRecord {
    std::variant<LonLat, PathChain, MultiPolygonGeom> geometry;
    std::map<std::string, std::string> properties;
};

// ---------------------------------------------------------------------------
// Ring math

inline double ring_signed_area(const Ring& ring) {
    double acc = 0.0;
    for (size_t i = 0; i + 1 < ring.size(); ++i) {
        acc += ring[i].lon * ring[i + 1].lat - ring[i + 1].lon * ring[i].lat;
    }
    return 0.5 * acc;
}

inline double ring_area(const Ring& ring) { return std::abs(ring_signed_area(ring)); }

// Even-odd rule; points exactly on the boundary are unspecified.
inline bool point_in_ring(const Ring& ring, LonLat p) {
    bool inside = false;
    size_t n = ring.size();
    if (n < 4) return false;
    for (size_t i = 0, j = n - 2; i + 1 < n; j = i++) {
        double yi = ring[i].lat, yj = ring[j].lat;
        double xi = ring[i].lon, xj = ring[j].lon;
        if ((yi > p.lat) != (yj > p.lat)) {
            double x_cross = xi + (p.lat - yi) * (xj - xi) / (yj - yi);
            if (p.lon < x_cross) inside = !inside;
        }
    }
    return inside;
}

inline bool contains(const PolygonWithHoles& poly, LonLat p) {
    if (!point_in_ring(poly.outer, p)) return false;
    for (const Ring& hole : poly.holes) {
        if (point_in_ring(hole, p)) return false;
    }
    return true;
}

inline bool contains(const MultiPolygonGeom& geom, LonLat p) {
    for (const auto& poly : geom.polygons) {
        if (contains(poly, p)) return true;
    }
    return false;
}

inline double area(const MultiPolygonGeom& geom) {
    double total = 0.0;
    for (const auto& poly : geom.polygons) {
        total += ring_area(poly.outer);
        for (const Ring& hole : poly.holes) total -= ring_area(hole);
    }
    return total;
}

// A point strictly inside the ring, found by intersecting a horizontal
// scanline through the ring's vertical midpoint with its edges. Retries on
// nearby scanlines when the midpoint grazes a horizontal edge.
inline std::optional<LonLat> interior_point(const Ring& ring) {
    if (ring.size() < 4) return std::nullopt;
    double lat_min = ring[0].lat, lat_max = ring[0].lat;
    for (const auto& p : ring) {
        lat_min = std::min(lat_min, p.lat);
        lat_max = std::max(lat_max, p.lat);
    }
    if (!(lat_max > lat_min)) return std::nullopt;
    double span = lat_max - lat_min;
    for (int attempt = 0; attempt < 16; ++attempt) {
        double y = lat_min + span * (0.5 + 0.271828 * (attempt + 1) * 0.01);
        if (y <= lat_min || y >= lat_max) y = lat_min + span * 0.5;
        std::vector<double> xs;
        bool grazes = false;
        for (size_t i = 0; i + 1 < ring.size(); ++i) {
            double y0 = ring[i].lat, y1 = ring[i + 1].lat;
            if (y0 == y || y1 == y) {
                grazes = true;
                break;
            }
            if ((y0 > y) != (y1 > y)) {
                double t = (y - y0) / (y1 - y0);
                xs.push_back(ring[i].lon + t * (ring[i + 1].lon - ring[i].lon));
            }
        }
        if (grazes || xs.size() < 2 || xs.size() % 2 != 0) continue;
        std::sort(xs.begin(), xs.end());
        return LonLat{(xs[0] + xs[1]) / 2.0, y};
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Line merging

namespace detail {

struct PointKey {
    std::uint64_t lon_bits;
    std::uint64_t lat_bits;
    friend bool operator==(const PointKey&, const PointKey&) = default;
};

inline PointKey point_key(LonLat p) {
    // Collapse -0.0 onto +0.0 so bitwise keys agree with operator==.
    double lon = p.lon == 0.0 ? 0.0 : p.lon;
    double lat = p.lat == 0.0 ? 0.0 : p.lat;
    PointKey k{};
    std::memcpy(&k.lon_bits, &lon, sizeof lon);
    std::memcpy(&k.lat_bits, &lat, sizeof lat);
    return k;
}

struct PointKeyHash {
    size_t operator()(const PointKey& k) const {
        std::uint64_t h = k.lon_bits * 0x9e3779b97f4a7c15ULL;
        h ^= k.lat_bits + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
        return static_cast<size_t>(h);
    }
};

} // namespace detail

// Joins open chains at endpoints where exactly two chain ends meet with
// identical coordinates (no snapping). Endpoints where three or more ends
// meet are left unjoined, matching linemerge semantics. Closed chains pass
// through untouched.
inline std::vector<PathChain> merge_lines(std::vector<PathChain> chains) {
    for (const auto& c : chains) {
        if (c.points.size() < 2) throw Error("merge_lines: chain with fewer than 2 points");
    }
    std::vector<bool> dead(chains.size(), false);

    bool merged_any = true;
    while (merged_any) {
        merged_any = false;
        // endpoint -> list of (chain index, end: 0 front / 1 back)
        std::unordered_map<detail::PointKey, std::vector<std::pair<size_t, int>>,
                           detail::PointKeyHash>
            ends;
        for (size_t i = 0; i < chains.size(); ++i) {
            if (dead[i] || chains[i].closed()) continue;
            ends[detail::point_key(chains[i].points.front())].emplace_back(i, 0);
            ends[detail::point_key(chains[i].points.back())].emplace_back(i, 1);
        }
        for (const auto& [key, entries] : ends) {
            if (entries.size() != 2) continue;
            auto [i, ei] = entries[0];
            auto [j, ej] = entries[1];
            if (i == j) continue;
            auto& a = chains[i].points;
            auto& b = chains[j].points;
            std::vector<LonLat> joined;
            joined.reserve(a.size() + b.size() - 1);
            if (ei == 1 && ej == 0) {
                joined = a;
                joined.insert(joined.end(), b.begin() + 1, b.end());
            } else if (ei == 1 && ej == 1) {
                joined = a;
                joined.insert(joined.end(), b.rbegin() + 1, b.rend());
            } else if (ei == 0 && ej == 1) {
                joined = b;
                joined.insert(joined.end(), a.begin() + 1, a.end());
            } else { // ei == 0 && ej == 0
                joined.assign(b.rbegin(), b.rend());
                joined.insert(joined.end(), a.begin() + 1, a.end());
            }
            chains[i].points = std::move(joined);
            dead[j] = true;
            merged_any = true;
            break; // endpoint map is stale; rebuild
        }
    }

    std::vector<PathChain> out;
    for (size_t i = 0; i < chains.size(); ++i) {
        if (!dead[i]) out.push_back(std::move(chains[i]));
    }
    return out;
}

// Closed chains (after merging) become rings; chains that never close are
// dropped, as the reference assembly discards them.
inline std::vector<Ring> polygonize(const std::vector<PathChain>& chains) {
    std::vector<Ring> rings;
    for (const auto& chain : merge_lines(chains)) {
        if (chain.closed() && chain.points.size() >= 4) {
            rings.push_back(chain.points);
        }
    }
    return rings;
}

namespace detail {

inline void force_winding(Ring& ring, bool counter_clockwise) {
    double a = ring_signed_area(ring);
    if ((a > 0.0) != counter_clockwise && a != 0.0) {
        std::reverse(ring.begin(), ring.end());
    }
}

} // namespace detail

// Builds the relation's multipolygon: outer way members are merged and
// polygonized into shells, inner members into candidate holes. Each hole is
// attached to the smallest shell containing one of its interior points;
// holes contained by no shell are dropped. Outer rings come out
// counter-clockwise, holes clockwise.
inline MultiPolygonGeom assemble_relation(const OsmElement& element) {
    if (element.kind != ElementKind::relation) {
        throw Error("assemble_relation: element is not a relation");
    }
    std::vector<PathChain> outer_segments;
    std::vector<PathChain> inner_segments;
    for (const auto& member : element.members) {
        if (member.kind != ElementKind::way || member.geometry.size() < 2) continue;
        if (member.role == "outer") outer_segments.push_back({member.geometry});
        if (member.role == "inner") inner_segments.push_back({member.geometry});
    }

    MultiPolygonGeom result;
    auto count_open = [](const std::vector<PathChain>& merged) {
        size_t open = 0;
        for (const auto& c : merged)
            if (!c.closed()) ++open;
        return open;
    };
    auto merged_outer = merge_lines(outer_segments);
    if (size_t open = count_open(merged_outer)) {
        result.warnings.push_back(std::to_string(open) + " outer chain(s) did not close");
    }
    std::vector<Ring> outer_rings = polygonize(outer_segments);
    if (outer_rings.empty()) {
        throw EmptyRelation("relation " + std::to_string(element.id) +
                            " has no closable outer ring");
    }
    auto merged_inner = merge_lines(inner_segments);
    if (size_t open = count_open(merged_inner)) {
        result.warnings.push_back(std::to_string(open) + " inner chain(s) did not close");
    }
    std::vector<Ring> inner_rings = polygonize(inner_segments);

    for (Ring& ring : outer_rings) {
        detail::force_winding(ring, true);
        result.polygons.push_back({std::move(ring), {}});
    }
    for (Ring& hole : inner_rings) {
        auto probe = interior_point(hole);
        PolygonWithHoles* host = nullptr;
        double host_area = 0.0;
        if (probe) {
            for (auto& poly : result.polygons) {
                if (!point_in_ring(poly.outer, *probe)) continue;
                double a = ring_area(poly.outer);
                if (!host || a < host_area) {
                    host = &poly;
                    host_area = a;
                }
            }
        }
        if (host) {
            detail::force_winding(hole, false);
            host->holes.push_back(std::move(hole));
        } else {
            result.warnings.push_back("inner ring contained by no outer ring; dropped");
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Overpass JSON

namespace detail {

inline ElementKind parse_kind(const std::string& type) {
    if (type == "node") return ElementKind::node;
    if (type == "way") return ElementKind::way;
    if (type == "relation") return ElementKind::relation;
    throw ParseError("unknown element type: " + type);
}

inline std::vector<LonLat> parse_point_array(const nlohmann::json& arr) {
    std::vector<LonLat> points;
    points.reserve(arr.size());
    for (const auto& p : arr) {
        if (p.is_null()) continue; // Overpass emits null for missing way nodes
        points.push_back({p.at("lon").get<double>(), p.at("lat").get<double>()});
    }
    return points;
}

} // namespace detail

inline std::vector<OsmElement> parse_overpass_json(const std::string& body) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("overpass response is not valid JSON: ") + e.what());
    }
    if (!doc.is_object() || !doc.contains("elements") || !doc["elements"].is_array()) {
        throw ParseError("overpass response lacks an elements array");
    }
    std::vector<OsmElement> elements;
    elements.reserve(doc["elements"].size());
    try {
        for (const auto& raw : doc["elements"]) {
            OsmElement e;
            e.kind = detail::parse_kind(raw.at("type").get<std::string>());
            e.id = raw.value("id", 0LL);
            if (raw.contains("tags")) e.tags = raw["tags"];
            if (e.kind == ElementKind::node) {
                e.geometry = {{raw.at("lon").get<double>(), raw.at("lat").get<double>()}};
            } else if (raw.contains("geometry")) {
                e.geometry = detail::parse_point_array(raw["geometry"]);
                if (e.kind == ElementKind::way && e.geometry.size() < 2) {
                    throw ParseError("way " + std::to_string(e.id) +
                                     " has a geometry with fewer than 2 points");
                }
            }
            if (raw.contains("center")) {
                e.center = LonLat{raw["center"].at("lon").get<double>(),
                                  raw["center"].at("lat").get<double>()};
            }
            if (raw.contains("members")) {
                for (const auto& m : raw["members"]) {
                    RelationMember member;
                    member.kind = detail::parse_kind(m.at("type").get<std::string>());
                    member.role = m.value("role", "");
                    if (m.contains("geometry")) {
                        member.geometry = detail::parse_point_array(m["geometry"]);
                    }
                    e.members.push_back(std::move(member));
                }
            }
            elements.push_back(std::move(e));
        }
    } catch (const ParseError&) {
        throw;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed overpass element: ") + e.what());
    }
    return elements;
}

// Inverse of parse_overpass_json for round-trip checks and report dumps.
inline nlohmann::json element_to_json(const OsmElement& e) {
    nlohmann::json out;
    out["type"] = to_string(e.kind);
    out["id"] = e.id;
    if (!e.tags.empty()) out["tags"] = e.tags;
    auto points_to_json = [](const std::vector<LonLat>& pts) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& p : pts) arr.push_back({{"lat", p.lat}, {"lon", p.lon}});
        return arr;
    };
    if (e.kind == ElementKind::node && e.geometry.size() == 1) {
        out["lat"] = e.geometry[0].lat;
        out["lon"] = e.geometry[0].lon;
    } else if (!e.geometry.empty()) {
        out["geometry"] = points_to_json(e.geometry);
    }
    if (e.center) out["center"] = {{"lat", e.center->lat}, {"lon", e.center->lon}};
    if (!e.members.empty()) {
        nlohmann::json members = nlohmann::json::array();
        for (const auto& m : e.members) {
            nlohmann::json mj;
            mj["type"] = to_string(m.kind);
            mj["role"] = m.role;
            if (!m.geometry.empty()) mj["geometry"] = points_to_json(m.geometry);
            members.push_back(std::move(mj));
        }
        out["members"] = std::move(members);
    }
    return out;
}

// Tag map flattened to plain strings: lists joined with ", ", scalars
// stringified; any geometry/members keys are excluded.
inline std::map<std::string, std::string> flatten_tags(const OsmElement& element) {
    auto scalar_to_string = [](const nlohmann::json& v) -> std::string {
        if (v.is_string()) return v.get<std::string>();
        return v.dump();
    };
    std::map<std::string, std::string> out;
    if (!element.tags.is_object()) return out;
    for (const auto& [key, value] : element.tags.items()) {
        if (key == "geometry" || key == "members") continue;
        if (value.is_array()) {
            std::string joined;
            for (size_t i = 0; i < value.size(); ++i) {
                if (i > 0) joined += ", ";
                joined += scalar_to_string(value[i]);
            }
            out[key] = joined;
        } else {
            out[key] = scalar_to_string(value);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// GeoJSON output (RFC 7946: lon-first, outer rings CCW, holes CW)

namespace detail {

inline nlohmann::ordered_json coord(const LonLat& p) {
    return nlohmann::ordered_json::array({p.lon, p.lat});
}

inline nlohmann::ordered_json geometry_to_geojson(
    const std::variant<LonLat, PathChain, MultiPolygonGeom>& geom) {
    nlohmann::ordered_json g;
    if (const auto* p = std::get_if<LonLat>(&geom)) {
        g["type"] = "Point";
        g["coordinates"] = coord(*p);
    } else if (const auto* line = std::get_if<PathChain>(&geom)) {
        g["type"] = "LineString";
        auto coords = nlohmann::ordered_json::array();
        for (const auto& p : line->points) coords.push_back(coord(p));
        g["coordinates"] = std::move(coords);
    } else {
        const auto& mp = std::get<MultiPolygonGeom>(geom);
        g["type"] = "MultiPolygon";
        auto polys = nlohmann::ordered_json::array();
        for (const auto& poly : mp.polygons) {
            auto rings = nlohmann::ordered_json::array();
            Ring outer = poly.outer;
            force_winding(outer, true);
            auto outer_coords = nlohmann::ordered_json::array();
            for (const auto& p : outer) outer_coords.push_back(coord(p));
            rings.push_back(std::move(outer_coords));
            for (Ring hole : poly.holes) {
                force_winding(hole, false);
                auto hole_coords = nlohmann::ordered_json::array();
                for (const auto& p : hole) hole_coords.push_back(coord(p));
                rings.push_back(std::move(hole_coords));
            }
            polys.push_back(std::move(rings));
        }
        g["coordinates"] = std::move(polys);
    }
    return g;
}

} // namespace detail

inline nlohmann::ordered_json to_geojson(const std::vector<FeatureRecord>& features) {
    nlohmann::ordered_json doc;
    doc["type"] = "FeatureCollection";
    auto arr = nlohmann::ordered_json::array();
    for (const auto& f : features) {
        nlohmann::ordered_json feature;
        feature["type"] = "Feature";
        feature["geometry"] = detail::geometry_to_geojson(f.geometry);
        feature["properties"] = nlohmann::ordered_json::object();
        for (const auto& [k, v] : f.properties) feature["properties"][k] = v;
        arr.push_back(std::move(feature));
    }
    doc["features"] = std::move(arr);
    return doc;
}

inline void write_geojson(const std::vector<FeatureRecord>& features,
                          const std::string& path) {
    if (features.empty()) throw Error("write_geojson: empty feature list");
    nlohmann::ordered_json doc = to_geojson(features);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << doc.dump();
    out.flush();
    if (!out) throw IoError("failed writing " + path);
}

} // namespace geodata::osm
