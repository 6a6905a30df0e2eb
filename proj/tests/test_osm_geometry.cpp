#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <random>
#include <set>

#include "geodata/osm_geometry.hpp"
#include "support/helpers.hpp"
#include "support/polygon_oracle.hpp"

using namespace geodata::osm;
namespace ts = testsupport;

namespace {

PathChain chain(std::initializer_list<std::pair<double, double>> pts) {
    PathChain c;
    for (auto [x, y] : pts) c.points.push_back({x, y});
    return c;
}

size_t pair_count(const std::vector<PathChain>& chains) {
    size_t n = 0;
    for (const auto& c : chains) n += c.points.size() - 1;
    return n;
}

OsmElement relation_with(std::vector<RelationMember> members) {
    OsmElement e;
    e.kind = ElementKind::relation;
    e.id = 42;
    e.members = std::move(members);
    return e;
}

RelationMember way(const char* role, std::initializer_list<std::pair<double, double>> pts) {
    RelationMember m;
    m.kind = ElementKind::way;
    m.role = role;
    for (auto [x, y] : pts) m.geometry.push_back({x, y});
    return m;
}

} // namespace

TEST_CASE("merge_lines joins chains sharing an endpoint") {
    auto merged = merge_lines({chain({{0, 0}, {1, 0}}), chain({{1, 0}, {1, 1}})});
    REQUIRE(merged.size() == 1);
    CHECK(merged[0].points == std::vector<LonLat>{{0, 0}, {1, 0}, {1, 1}});
}

TEST_CASE("merge_lines keeps unrelated chains apart") {
    auto merged = merge_lines({chain({{0, 0}, {1, 0}}), chain({{5, 5}, {6, 5}})});
    REQUIRE(merged.size() == 2);
}

TEST_CASE("merge_lines closes a square from four unit segments") {
    auto merged = merge_lines({
        chain({{0, 0}, {1, 0}}),
        chain({{1, 0}, {1, 1}}),
        chain({{1, 1}, {0, 1}}),
        chain({{0, 1}, {0, 0}}),
    });
    REQUIRE(merged.size() == 1);
    CHECK(merged[0].closed());
    CHECK(merged[0].points.size() == 5);
}

TEST_CASE("merge_lines does not join where three ends meet") {
    // Y junction: three segments share (0,0); linemerge semantics leave them.
    auto merged = merge_lines({
        chain({{0, 0}, {1, 0}}),
        chain({{0, 0}, {0, 1}}),
        chain({{0, 0}, {-1, 0}}),
    });
    CHECK(merged.size() == 3);
}

TEST_CASE("merge_lines conserves consecutive point pairs") {
    std::mt19937 rng(7);
    for (int iter = 0; iter < 50; ++iter) {
        auto cfg = ts::random_config(rng);
        std::vector<PathChain> chains;
        for (const auto& shape : cfg.shapes) {
            for (auto& c : ts::split_ring(shape.outer, 4, rng)) {
                PathChain pc;
                for (auto& [x, y] : c) pc.points.push_back({x, y});
                chains.push_back(std::move(pc));
            }
        }
        size_t before = pair_count(chains);
        CHECK(pair_count(merge_lines(chains)) == before);
    }
}

TEST_CASE("polygonize turns a closed square chain into one ring") {
    auto rings = polygonize({chain({{0, 0}, {1, 0}, {1, 1}, {0, 1}, {0, 0}})});
    REQUIRE(rings.size() == 1);
    CHECK(ring_area(rings[0]) == Catch::Approx(1.0));
}

TEST_CASE("polygonize drops chains that never close") {
    CHECK(polygonize({chain({{0, 0}, {1, 0}, {2, 0}})}).empty());
}

TEST_CASE("polygonize keeps disjoint squares separate") {
    auto rings = polygonize({
        chain({{0, 0}, {1, 0}, {1, 1}, {0, 1}, {0, 0}}),
        chain({{5, 5}, {6, 5}, {6, 6}, {5, 6}, {5, 5}}),
    });
    CHECK(rings.size() == 2);
}

TEST_CASE("assemble_relation: single closed square outer") {
    auto geom = assemble_relation(relation_with({
        way("outer", {{0, 0}, {1, 0}, {1, 1}, {0, 1}, {0, 0}}),
    }));
    REQUIRE(geom.polygons.size() == 1);
    CHECK(geom.polygons[0].holes.empty());
    CHECK(area(geom) == Catch::Approx(1.0));
    CHECK(geom.warnings.empty());
}

TEST_CASE("assemble_relation: split outer with an inner hole") {
    // Outer square of side 4 split into two open chains, inner square side 2.
    auto geom = assemble_relation(relation_with({
        way("outer", {{0, 0}, {4, 0}, {4, 4}}),
        way("outer", {{4, 4}, {0, 4}, {0, 0}}),
        way("inner", {{1, 1}, {3, 1}, {3, 3}, {1, 3}, {1, 1}}),
    }));
    REQUIRE(geom.polygons.size() == 1);
    REQUIRE(geom.polygons[0].holes.size() == 1);
    CHECK(area(geom) == Catch::Approx(12.0));
    // Serialized winding: outer counter-clockwise, holes clockwise.
    CHECK(ring_signed_area(geom.polygons[0].outer) > 0.0);
    CHECK(ring_signed_area(geom.polygons[0].holes[0]) < 0.0);
}

TEST_CASE("assemble_relation rejects relations with no closable outer") {
    CHECK_THROWS_AS(assemble_relation(relation_with({
                        way("outer", {{0, 0}, {1, 0}}),
                    })),
                    geodata::EmptyRelation);
    CHECK_THROWS_AS(assemble_relation(relation_with({})), geodata::EmptyRelation);
}

TEST_CASE("assemble_relation drops inner rings outside every outer") {
    auto geom = assemble_relation(relation_with({
        way("outer", {{0, 0}, {4, 0}, {4, 4}, {0, 4}, {0, 0}}),
        way("inner", {{10, 10}, {12, 10}, {12, 12}, {10, 12}, {10, 10}}),
    }));
    CHECK(geom.polygons[0].holes.empty());
    CHECK_FALSE(geom.warnings.empty());
}

TEST_CASE("ring splitting invariance: split rings reassemble to the same area") {
    std::mt19937 rng(1234);
    for (int iter = 0; iter < 40; ++iter) {
        auto cfg = ts::random_config(rng);
        const auto& shape = cfg.shapes[0];
        double want = ts::oracle_ring_area(shape.outer);
        std::set<std::pair<double, double>> want_vertices(shape.outer.pts.begin(),
                                                          shape.outer.pts.end());
        std::uniform_int_distribution<int> kdist(2, 5);
        auto parts = ts::split_ring(shape.outer, kdist(rng), rng);
        std::vector<PathChain> chains;
        for (auto& part : parts) {
            PathChain pc;
            for (auto& [x, y] : part) pc.points.push_back({x, y});
            chains.push_back(std::move(pc));
        }
        auto rings = polygonize(chains);
        REQUIRE(rings.size() == 1);
        CHECK(ring_area(rings[0]) == Catch::Approx(want).epsilon(1e-12));
        std::set<std::pair<double, double>> got_vertices;
        for (const auto& p : rings[0]) got_vertices.insert({p.lon, p.lat});
        CHECK(got_vertices == want_vertices);
    }
}

TEST_CASE("randomized polygonization agrees with the construction oracle") {
    std::mt19937 rng(99);
    for (int iter = 0; iter < 60; ++iter) {
        auto cfg = ts::random_config(rng);
        auto rel = ts::to_relation(cfg, rng);
        auto geom = assemble_relation(rel);
        double want = ts::oracle_expected_area(cfg);
        CHECK(area(geom) == Catch::Approx(want).epsilon(1e-9));
        for (int s = 0; s < 300; ++s) {
            auto [px, py] = ts::sample_point(cfg, rng);
            bool want_in = ts::oracle_contains(cfg, px, py);
            bool got_in = contains(geom, LonLat{px, py});
            if (want_in != got_in) {
                CAPTURE(iter, px, py);
                REQUIRE(want_in == got_in);
            }
        }
    }
}

TEST_CASE("parse_overpass_json handles empty and malformed documents") {
    CHECK(parse_overpass_json(R"({"elements": []})").empty());
    CHECK_THROWS_AS(parse_overpass_json("{}"), geodata::ParseError);
    CHECK_THROWS_AS(parse_overpass_json("not json"), geodata::ParseError);
}

TEST_CASE("parse_overpass_json reads nodes, ways, and relations") {
    auto elements = parse_overpass_json(R"({
      "elements": [
        {"type": "node", "id": 1, "lat": 30.5, "lon": 114.2, "tags": {"name": "x"}},
        {"type": "way", "id": 2, "geometry": [{"lat": 0, "lon": 0}, {"lat": 1, "lon": 1}]},
        {"type": "way", "id": 3, "center": {"lat": 5, "lon": 6}},
        {"type": "relation", "id": 4, "members": [
          {"type": "way", "role": "outer",
           "geometry": [{"lat": 0, "lon": 0}, {"lat": 0, "lon": 2}]}]}
      ]})");
    REQUIRE(elements.size() == 4);
    CHECK(elements[0].kind == ElementKind::node);
    REQUIRE(elements[0].geometry.size() == 1);
    CHECK(elements[0].geometry[0] == LonLat{114.2, 30.5});
    CHECK(elements[1].geometry.size() == 2);
    REQUIRE(elements[2].center.has_value());
    CHECK(*elements[2].center == LonLat{6, 5});
    REQUIRE(elements[3].members.size() == 1);
    CHECK(elements[3].members[0].role == "outer");
    CHECK(elements[3].members[0].geometry.size() == 2);
}

TEST_CASE("parse then re-serialize preserves member coordinates bit-exactly") {
    auto body = ts::slurp(ts::fixture_dir() / "overpass" / "cuba_provinces.json");
    auto elements = parse_overpass_json(body);
    REQUIRE_FALSE(elements.empty());
    nlohmann::json round;
    round["elements"] = nlohmann::json::array();
    for (const auto& e : elements) round["elements"].push_back(element_to_json(e));
    auto reparsed = parse_overpass_json(round.dump());
    REQUIRE(reparsed.size() == elements.size());
    for (size_t i = 0; i < elements.size(); ++i) {
        REQUIRE(reparsed[i].members.size() == elements[i].members.size());
        for (size_t m = 0; m < elements[i].members.size(); ++m) {
            const auto& a = elements[i].members[m].geometry;
            const auto& b = reparsed[i].members[m].geometry;
            REQUIRE(a.size() == b.size());
            for (size_t p = 0; p < a.size(); ++p) {
                REQUIRE(a[p].lon == b[p].lon);
                REQUIRE(a[p].lat == b[p].lat);
            }
        }
    }
}

TEST_CASE("recorded Cuba provinces fixture assembles against the segment oracle") {
    auto body = ts::slurp(ts::fixture_dir() / "overpass" / "cuba_provinces.json");
    auto elements = parse_overpass_json(body);
    REQUIRE_FALSE(elements.empty());
    std::mt19937 rng(2024);
    for (const auto& e : elements) {
        REQUIRE(e.kind == ElementKind::relation);
        size_t outer_members = 0;
        for (const auto& m : e.members)
            if (m.role == "outer") ++outer_members;
        REQUIRE(outer_members >= 1);

        auto geom = assemble_relation(e);
        REQUIRE_FALSE(geom.polygons.empty());
        double min_lon = 1e9, max_lon = -1e9, min_lat = 1e9, max_lat = -1e9;
        for (const auto& m : e.members) {
            for (const auto& p : m.geometry) {
                min_lon = std::min(min_lon, p.lon);
                max_lon = std::max(max_lon, p.lon);
                min_lat = std::min(min_lat, p.lat);
                max_lat = std::max(max_lat, p.lat);
            }
        }
        std::uniform_real_distribution<double> ux(min_lon - 0.1, max_lon + 0.1);
        std::uniform_real_distribution<double> uy(min_lat - 0.1, max_lat + 0.1);
        for (int s = 0; s < 1000; ++s) {
            double px = ux(rng), py = uy(rng);
            bool want = ts::oracle_odd_crossings(e.members, "outer", px, py) &&
                        !ts::oracle_odd_crossings(e.members, "inner", px, py);
            bool got = contains(geom, LonLat{px, py});
            if (want != got) {
                CAPTURE(e.id, px, py);
                REQUIRE(want == got);
            }
        }
    }
}

TEST_CASE("flatten_tags stringifies scalars and joins lists") {
    OsmElement e;
    e.tags = nlohmann::json{{"name", "Cuba"}};
    auto flat = flatten_tags(e);
    CHECK(flat == std::map<std::string, std::string>{{"name", "Cuba"}});

    e.tags = nlohmann::json{{"name", nlohmann::json::array({"a", "b"})}};
    CHECK(flatten_tags(e)["name"] == "a, b");

    e.tags = nlohmann::json{{"population", 123}, {"members", "bogus"}, {"geometry", "x"}};
    auto flat2 = flatten_tags(e);
    CHECK(flat2["population"] == "123");
    CHECK_FALSE(flat2.contains("members"));
    CHECK_FALSE(flat2.contains("geometry"));
}

TEST_CASE("write_geojson emits lon-first coordinates and CCW outer rings") {
    ts::TempDir tmp;
    auto path = (tmp.path() / "out.geojson").string();

    FeatureRecord point;
    point.geometry = LonLat{10, 20};
    point.properties["name"] = "p";
    write_geojson({point}, path);
    auto doc = nlohmann::json::parse(ts::slurp(path));
    CHECK(doc["type"] == "FeatureCollection");
    CHECK(doc["features"][0]["geometry"]["coordinates"] ==
          nlohmann::json::array({10, 20}));

    // Clockwise square on input must serialize counter-clockwise.
    MultiPolygonGeom mp;
    mp.polygons.push_back({Ring{{0, 0}, {0, 1}, {1, 1}, {1, 0}, {0, 0}}, {}});
    FeatureRecord poly;
    poly.geometry = mp;
    write_geojson({poly}, path);
    doc = nlohmann::json::parse(ts::slurp(path));
    auto ring = doc["features"][0]["geometry"]["coordinates"][0][0];
    Ring parsed;
    for (const auto& c : ring) parsed.push_back({c[0].get<double>(), c[1].get<double>()});
    CHECK(ring_signed_area(parsed) > 0.0);
}

TEST_CASE("write_geojson reports unwritable targets") {
    CHECK_THROWS_AS(write_geojson({FeatureRecord{LonLat{0, 0}, {}}},
                                  "/nonexistent-dir/sub/out.geojson"),
                    geodata::IoError);
}
