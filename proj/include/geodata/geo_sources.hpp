#pragma once

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <regex>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "geodata/errors.hpp"
#include "geodata/http_transport.hpp"
#include "geodata/image.hpp"

// Deterministic request builders, validators, and thin clients for the
// concrete data sources: Overpass, Census cartographic boundaries and ACS,
// OpenWeather limits, slippy tile imagery with mosaicking, the NYT COVID-19
// tables, and OpenTopography DEM requests. Tests use these as oracles for
// what generated programs fetch.

namespace geodata::sources {

// Shortest round-trip decimal form, the same for equal doubles everywhere.
inline std::string format_double(double v) {
    std::array<char, 32> buf{};
    auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), end);
}

inline std::string url_encode(const std::string& text) {
    static const char* hex = "0123456789ABCDEF";
    std::string out;
    out.reserve(text.size() * 3 / 2);
    for (unsigned char c : text) {
        if ((c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') ||
            c == '-' || c == '_' || c == '.' || c == '~') {
            out.push_back(static_cast<char>(c));
        } else {
            out.push_back('%');
            out.push_back(hex[c >> 4]);
            out.push_back(hex[c & 0xf]);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Core geographic types

struct BBox {
    double south = 0, west = 0, north = 0, east = 0;

    static BBox of(double south, double west, double north, double east) {
        if (!(south >= -90.0 && south < north && north <= 90.0)) {
            throw InvalidBBox("latitude bounds must satisfy -90 <= south < north <= 90");
        }
        if (!(west >= -180.0 && west < east && east <= 180.0)) {
            throw InvalidBBox(
                "longitude bounds must satisfy -180 <= west < east <= 180 "
                "(antimeridian-crossing boxes are not supported)");
        }
        return BBox{south, west, north, east};
    }

    bool contains(double lon, double lat) const {
        return lat >= south && lat <= north && lon >= west && lon <= east;
    }
};

inline constexpr double kWebMercatorLatLimit = 85.0511;
inline constexpr double kEarthRadiusMeters = 6378137.0;
inline const double kWebMercatorWorldSize = 2.0 * M_PI * kEarthRadiusMeters;

struct TileCoord {
    int z = 0;
    long x = 0;
    long y = 0;
    friend bool operator==(const TileCoord&, const TileCoord&) = default;

    static TileCoord of(int z, long x, long y) {
        long side = 1L << z;
        if (z < 0 || x < 0 || y < 0 || x >= side || y >= side) {
            throw InvalidTileCoord("tile (" + std::to_string(z) + "," + std::to_string(x) +
                                   "," + std::to_string(y) + ") outside the zoom-" +
                                   std::to_string(z) + " pyramid");
        }
        return TileCoord{z, x, y};
    }
};

namespace detail {

// Raw slippy-map indices, clamped into the pyramid. Callers validate ranges.
inline std::pair<long, long> tile_indices(double lon, double lat, int z) {
    double n = std::pow(2.0, z);
    double phi = lat * M_PI / 180.0;
    long x = static_cast<long>(std::floor((lon + 180.0) / 360.0 * n));
    long y = static_cast<long>(
        std::floor((1.0 - std::log(std::tan(phi) + 1.0 / std::cos(phi)) / M_PI) / 2.0 * n));
    long side = 1L << z;
    x = std::clamp(x, 0L, side - 1);
    y = std::clamp(y, 0L, side - 1);
    return {x, y};
}

} // namespace detail

inline TileCoord lonlat_to_tile(double lon, double lat, int z) {
    if (z < 0) throw InvalidTileCoord("negative zoom");
    if (std::abs(lat) > kWebMercatorLatLimit) {
        throw LatitudeOutOfRange("latitude " + format_double(lat) +
                                 " outside the Web Mercator range");
    }
    if (lon < -180.0 || lon >= 180.0) {
        throw LongitudeOutOfRange("longitude " + format_double(lon) +
                                  " outside [-180, 180)");
    }
    auto [x, y] = detail::tile_indices(lon, lat, z);
    return TileCoord{z, x, y};
}

inline BBox tile_bbox(const TileCoord& t) {
    TileCoord::of(t.z, t.x, t.y); // validate
    double n = std::pow(2.0, t.z);
    auto lat_of = [&](double y) {
        return std::atan(std::sinh(M_PI * (1.0 - 2.0 * y / n))) * 180.0 / M_PI;
    };
    BBox box;
    box.west = static_cast<double>(t.x) / n * 360.0 - 180.0;
    box.east = static_cast<double>(t.x + 1) / n * 360.0 - 180.0;
    box.north = lat_of(static_cast<double>(t.y));
    box.south = lat_of(static_cast<double>(t.y + 1));
    return box;
}

struct TileGridOptions {
    int max_zoom = 19;
    long max_tiles = 1024;
};

// Minimal axis-aligned rectangle of tiles covering the bbox, row-major from
// the northwest corner.
struct TileGrid {
    int z = 0;
    long x0 = 0, y0 = 0;
    long cols = 0, rows = 0;

    long count() const { return cols * rows; }
    TileCoord at(long row, long col) const {
        return TileCoord{z, x0 + col, y0 + row};
    }
    std::vector<TileCoord> tiles() const {
        std::vector<TileCoord> out;
        out.reserve(static_cast<size_t>(count()));
        for (long r = 0; r < rows; ++r)
            for (long c = 0; c < cols; ++c) out.push_back(at(r, c));
        return out;
    }
    friend bool operator==(const TileGrid&, const TileGrid&) = default;
};

inline TileGrid tiles_covering(const BBox& bbox, int z, const TileGridOptions& opts = {}) {
    if (z < 0) throw InvalidTileCoord("negative zoom");
    if (z > opts.max_zoom) {
        throw ZoomTooLarge("zoom " + std::to_string(z) + " exceeds the configured cap of " +
                           std::to_string(opts.max_zoom));
    }
    double south = std::clamp(bbox.south, -kWebMercatorLatLimit, kWebMercatorLatLimit);
    double north = std::clamp(bbox.north, -kWebMercatorLatLimit, kWebMercatorLatLimit);
    double west = std::clamp(bbox.west, -180.0, std::nexttoward(180.0, 0.0));
    double east = std::clamp(bbox.east, -180.0, std::nexttoward(180.0, 0.0));
    auto [x_min, y_min] = detail::tile_indices(west, north, z);
    auto [x_max, y_max] = detail::tile_indices(east, south, z);
    TileGrid grid;
    grid.z = z;
    grid.x0 = x_min;
    grid.y0 = y_min;
    grid.cols = x_max - x_min + 1;
    grid.rows = y_max - y_min + 1;
    if (grid.count() > opts.max_tiles) {
        throw GridTooLarge("grid of " + std::to_string(grid.count()) +
                           " tiles exceeds the cap of " + std::to_string(opts.max_tiles));
    }
    return grid;
}

// ---------------------------------------------------------------------------
// Mosaicking

inline constexpr long kTileSizePx = 256;

struct GeoTransform {
    double origin_x = 0;      // top-left corner, Web Mercator meters
    double origin_y = 0;
    double pixel_size_x = 0;  // meters per pixel
    double pixel_size_y = 0;  // positive magnitude; rasters grow downward
};

struct MosaicImage {
    long width = 0;
    long height = 0;
    std::vector<std::uint8_t> pixels; // row-major RGBA
    GeoTransform geotransform;
};

inline MosaicImage mosaic(const TileGrid& grid, const std::vector<Raster>& images) {
    if (static_cast<long>(images.size()) != grid.count()) {
        throw IncompleteGrid("grid wants " + std::to_string(grid.count()) +
                             " tiles, got " + std::to_string(images.size()));
    }
    for (const auto& img : images) {
        if (img.width != kTileSizePx || img.height != kTileSizePx) {
            throw DimensionMismatch("tile is " + std::to_string(img.width) + "x" +
                                    std::to_string(img.height) + ", expected 256x256");
        }
    }
    MosaicImage out;
    out.width = grid.cols * kTileSizePx;
    out.height = grid.rows * kTileSizePx;
    out.pixels.assign(static_cast<size_t>(out.width) * out.height * 4, 0);
    for (long r = 0; r < grid.rows; ++r) {
        for (long c = 0; c < grid.cols; ++c) {
            const auto& tile = images[static_cast<size_t>(r * grid.cols + c)];
            for (long y = 0; y < kTileSizePx; ++y) {
                auto* dst = out.pixels.data() +
                            ((r * kTileSizePx + y) * out.width + c * kTileSizePx) * 4;
                const auto* src = tile.rgba.data() + y * kTileSizePx * 4;
                std::copy(src, src + kTileSizePx * 4, dst);
            }
        }
    }
    double n = std::pow(2.0, grid.z);
    double meters_per_tile = kWebMercatorWorldSize / n;
    out.geotransform.origin_x = grid.x0 * meters_per_tile - kWebMercatorWorldSize / 2.0;
    out.geotransform.origin_y = kWebMercatorWorldSize / 2.0 - grid.y0 * meters_per_tile;
    out.geotransform.pixel_size_x = meters_per_tile / kTileSizePx;
    out.geotransform.pixel_size_y = meters_per_tile / kTileSizePx;
    return out;
}

inline Raster to_raster(const MosaicImage& m) {
    Raster img;
    img.width = m.width;
    img.height = m.height;
    img.rgba = m.pixels;
    return img;
}

// Six-line ESRI world file: pixel sizes, zero rotation, and the center of
// the top-left pixel in Web Mercator meters.
inline std::string world_file_text(const MosaicImage& m) {
    const auto& gt = m.geotransform;
    std::string out;
    out += format_double(gt.pixel_size_x) + "\n";
    out += "0\n";
    out += "0\n";
    out += format_double(-gt.pixel_size_y) + "\n";
    out += format_double(gt.origin_x + gt.pixel_size_x / 2.0) + "\n";
    out += format_double(gt.origin_y - gt.pixel_size_y / 2.0) + "\n";
    return out;
}

inline void write_world_file(const MosaicImage& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << world_file_text(m);
}

// ---------------------------------------------------------------------------
// Tile fetching

inline constexpr const char* kEsriWorldImageryTemplate =
    "https://server.arcgisonline.com/ArcGIS/rest/services/World_Imagery/MapServer/"
    "tile/{z}/{y}/{x}";

inline std::string tile_url(const TileCoord& t, const std::string& url_template) {
    auto replace_all = [](std::string text, const std::string& token,
                          const std::string& value) {
        size_t pos = 0;
        while ((pos = text.find(token, pos)) != std::string::npos) {
            text.replace(pos, token.size(), value);
            pos += value.size();
        }
        return text;
    };
    for (const char* marker : {"{z}", "{x}", "{y}"}) {
        if (url_template.find(marker) == std::string::npos) {
            throw BadTemplate(std::string("tile URL template lacks ") + marker);
        }
    }
    std::string url = replace_all(url_template, "{z}", std::to_string(t.z));
    url = replace_all(url, "{x}", std::to_string(t.x));
    url = replace_all(url, "{y}", std::to_string(t.y));
    return url;
}

inline std::string fetch_tile(const TileCoord& t, const std::string& url_template,
                              HttpTransport& transport) {
    std::string url = tile_url(t, url_template);
    HttpResponse response = transport.get(url);
    if (response.status != 200) {
        throw HttpError("tile " + url + " returned HTTP " +
                        std::to_string(response.status));
    }
    if (!sniff_image_format(response.body)) {
        throw NotAnImage("tile " + url + " body is not a known raster format");
    }
    return response.body;
}

// Fetches every tile of the grid with bounded parallelism. Results are
// ordered row-major regardless of completion order.
inline std::vector<std::string> fetch_tiles(const TileGrid& grid,
                                            const std::string& url_template,
                                            HttpTransport& transport,
                                            int parallelism = 4) {
    auto coords = grid.tiles();
    std::vector<std::string> bodies(coords.size());
    std::vector<std::exception_ptr> failures(coords.size());
    std::atomic<size_t> next{0};
    auto worker = [&] {
        for (size_t i = next.fetch_add(1); i < coords.size(); i = next.fetch_add(1)) {
            try {
                bodies[i] = fetch_tile(coords[i], url_template, transport);
            } catch (...) {
                failures[i] = std::current_exception();
            }
        }
    };
    int thread_count = std::max(1, std::min<int>(parallelism, coords.size()));
    std::vector<std::thread> threads;
    threads.reserve(thread_count);
    for (int i = 0; i < thread_count; ++i) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    for (auto& failure : failures) {
        if (failure) std::rethrow_exception(failure);
    }
    return bodies;
}

// ---------------------------------------------------------------------------
// Geocoding

inline constexpr const char* kNominatimSearchEndpoint =
    "https://nominatim.openstreetmap.org/search";

struct GeocodeResult {
    BBox bbox;
    std::string display_name;
};

inline GeocodeResult geocode(const std::string& place_name, HttpTransport& transport,
                             const std::string& endpoint = kNominatimSearchEndpoint) {
    if (place_name.empty()) throw NoMatch("empty place name");
    std::string url = endpoint + "?q=" + url_encode(place_name) + "&format=json&limit=10";
    HttpResponse response = transport.get(url);
    if (response.status != 200) {
        throw HttpError("geocoder returned HTTP " + std::to_string(response.status));
    }
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(response.body);
    } catch (const nlohmann::json::exception& e) {
        throw HttpError(std::string("geocoder returned malformed JSON: ") + e.what());
    }
    if (!doc.is_array() || doc.empty()) {
        throw NoMatch("no geocoding result for '" + place_name + "'");
    }
    const auto& first = doc[0];
    const auto& bb = first.at("boundingbox"); // [south, north, west, east] as strings
    auto num = [](const nlohmann::json& v) {
        return v.is_string() ? std::stod(v.get<std::string>()) : v.get<double>();
    };
    GeocodeResult out{BBox::of(num(bb.at(0)), num(bb.at(2)), num(bb.at(1)), num(bb.at(3))),
                      first.value("display_name", "")};
    return out;
}

// ---------------------------------------------------------------------------
// Overpass

inline constexpr const char* kOverpassEndpoint = "https://overpass-api.de/api/interpreter";

// Area-then-relation pattern for fetching all child boundaries of a country.
inline std::string build_admin_boundary_query(const std::string& country_code,
                                              int child_admin_level) {
    if (child_admin_level < 1 || child_admin_level > 11) {
        throw Error("admin_level must be in 1..11");
    }
    std::string set_name = country_code;
    std::transform(set_name.begin(), set_name.end(), set_name.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    std::string query;
    query += "[out:json];\n";
    query += "area[\"ISO3166-1\"=\"" + country_code + "\"][admin_level=2]->." + set_name +
             ";\n";
    query += "relation(area." + set_name + ")[\"admin_level\"=\"" +
             std::to_string(child_admin_level) + "\"];\n";
    query += "out geom;\n";
    return query;
}

struct RegionFilter {
    std::string key;
    std::string value;
    bool quote_key = true;

    // e.g. ISO3166-2=US-PA
    static RegionFilter code(const std::string& key, const std::string& value) {
        return RegionFilter{key, value, true};
    }
    // English place name, written as the bare [name:en='...'] form.
    static RegionFilter english_name(const std::string& name) {
        return RegionFilter{"name:en", name, false};
    }
};

inline std::string build_poi_query(const RegionFilter& region, const std::string& amenity) {
    if (amenity.empty()) throw Error("amenity must be non-empty");
    std::string key = region.quote_key ? "'" + region.key + "'" : region.key;
    return "area[" + key + "='" + region.value + "']->.searchArea;(nwr[amenity='" + amenity +
           "'](area.searchArea));out center;";
}

inline std::string execute_overpass(const std::string& query, const std::string& endpoint,
                                    HttpTransport& transport) {
    if (query.empty()) throw Error("empty overpass query");
    HttpResponse response = transport.post_form(endpoint, "data=" + url_encode(query));
    if (response.status != 200) {
        throw HttpError("overpass returned HTTP " + std::to_string(response.status));
    }
    auto doc = nlohmann::json::parse(response.body, nullptr, false);
    if (doc.is_object() && doc.contains("remark")) {
        throw OverpassRemark(doc["remark"].is_string() ? doc["remark"].get<std::string>()
                                                       : doc["remark"].dump());
    }
    return response.body;
}

// ---------------------------------------------------------------------------
// Census cartographic boundaries and ACS

enum class BoundaryLayer { state, county, tract, bg };

inline const char* to_string(BoundaryLayer layer) {
    switch (layer) {
    case BoundaryLayer::state: return "state";
    case BoundaryLayer::county: return "county";
    case BoundaryLayer::tract: return "tract";
    default: return "bg";
    }
}

struct BoundaryScope {
    std::string value; // "us" or a 2-digit state FIPS

    static BoundaryScope nation() { return BoundaryScope{"us"}; }
    static BoundaryScope state_fips(int fips) {
        std::string s = std::to_string(fips);
        if (s.size() < 2) s.insert(s.begin(), '0');
        return BoundaryScope{s};
    }
    bool is_nation() const { return value == "us"; }
};

inline std::string build_census_boundary_url(int year, BoundaryLayer layer,
                                             const BoundaryScope& scope) {
    if ((layer == BoundaryLayer::tract || layer == BoundaryLayer::bg) && scope.is_nation()) {
        throw ScopeRequired(std::string(to_string(layer)) +
                            " boundaries require a state FIPS scope");
    }
    std::string y = std::to_string(year);
    return "https://www2.census.gov/geo/tiger/GENZ" + y + "/shp/cb_" + y + "_" +
           scope.value + "_" + to_string(layer) + "_500k.zip";
}

struct GeographyClause {
    std::string for_clause;          // e.g. "county:*"
    std::string in_clause;           // e.g. "state:42"; may be empty
};

inline constexpr const char* kAcsVariablePattern = "[A-Z][0-9]+_[0-9]{3}[A-Z]";

inline std::string build_acs_url(int year, const std::vector<std::string>& variables,
                                 const GeographyClause& geography,
                                 const std::string& api_key_placeholder = "") {
    if (variables.empty()) throw EmptyVariables("no ACS variables given");
    static const std::regex pattern("^" + std::string(kAcsVariablePattern) + "$");
    for (const auto& v : variables) {
        if (!std::regex_match(v, pattern)) {
            throw BadVariableCode("'" + v + "' is not a valid ACS variable code");
        }
    }
    std::string vars;
    for (size_t i = 0; i < variables.size(); ++i) {
        if (i) vars += ",";
        vars += variables[i];
    }
    std::string url = "https://api.census.gov/data/" + std::to_string(year) +
                      "/acs/acs5?get=NAME," + vars + "&for=" + geography.for_clause;
    if (!geography.in_clause.empty()) url += "&in=" + geography.in_clause;
    if (!api_key_placeholder.empty()) url += "&key=" + api_key_placeholder;
    return url;
}

// ---------------------------------------------------------------------------
// Weather request limits

enum class WeatherKind { historical, current, forecast };
enum class WeatherGranularity { hourly, three_hour, daily };

struct WeatherQuerySpec {
    WeatherKind kind = WeatherKind::current;
    WeatherGranularity granularity = WeatherGranularity::hourly;
    double lat = 0, lon = 0;
    std::int64_t range_start = 0;   // unix seconds, UTC
    std::int64_t range_end = 0;
    std::int64_t reference_now = 0; // supplied by the caller, never the wall clock
};

inline constexpr std::int64_t kWeatherHistoricalFloor = 1690848000; // 2023-08-01T00:00Z
inline constexpr std::int64_t kSecondsPerDay = 86400;

inline std::int64_t forecast_horizon_days(WeatherGranularity g) {
    switch (g) {
    case WeatherGranularity::hourly: return 4;
    case WeatherGranularity::three_hour: return 5;
    default: return 16;
    }
}

inline WeatherQuerySpec validate_weather_request(const WeatherQuerySpec& spec) {
    if (spec.kind == WeatherKind::current) return spec;
    if (spec.range_end < spec.range_start) {
        throw EmptyRange("weather range end precedes start");
    }
    if (spec.kind == WeatherKind::historical) {
        if (spec.range_start < kWeatherHistoricalFloor) {
            throw HistoricalTooEarly("historical weather is only available from 2023-08 on");
        }
        return spec;
    }
    std::int64_t horizon = forecast_horizon_days(spec.granularity) * kSecondsPerDay;
    if (spec.range_end - spec.reference_now > horizon) {
        throw ForecastTooLong("forecast span exceeds " +
                              std::to_string(forecast_horizon_days(spec.granularity)) +
                              " days");
    }
    return spec;
}

// ---------------------------------------------------------------------------
// NYT COVID-19 tables

enum class CovidLevel { state, county };

inline constexpr const char* kCovidFirstDate = "2020-01-21";
inline constexpr const char* kCovidLastDate = "2023-03-23";

struct CovidQuerySpec {
    CovidLevel level = CovidLevel::state;
    std::string start_date; // ISO YYYY-MM-DD
    std::string end_date;
    std::string region;     // optional state (or county) filter

    static CovidQuerySpec of(CovidLevel level, const std::string& start_date,
                             const std::string& end_date, const std::string& region = "") {
        static const std::regex iso(R"(^\d{4}-\d{2}-\d{2}$)");
        if (!std::regex_match(start_date, iso) || !std::regex_match(end_date, iso)) {
            throw RangeError("dates must be YYYY-MM-DD");
        }
        if (end_date < start_date) throw RangeError("end date precedes start date");
        if (start_date < kCovidFirstDate || end_date > kCovidLastDate) {
            throw RangeError("the dataset covers 2020-01-21 through 2023-03-23 only");
        }
        return CovidQuerySpec{level, start_date, end_date, region};
    }
};

struct CovidSourceConfig {
    std::string state_url =
        "https://raw.githubusercontent.com/nytimes/covid-19-data/master/us-states.csv";
    std::string county_url =
        "https://raw.githubusercontent.com/nytimes/covid-19-data/master/us-counties.csv";
};

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

// RFC 4180-style parse; every record must carry the header's field count.
inline std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> record;
    std::string field;
    bool quoted = false;
    bool field_started = false;
    auto end_field = [&] {
        record.push_back(std::move(field));
        field.clear();
        field_started = false;
    };
    auto end_record = [&] {
        end_field();
        records.push_back(std::move(record));
        record.clear();
    };
    for (size_t i = 0; i < text.size(); ++i) {
        char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field.push_back(c);
            }
        } else if (c == '"' && !field_started) {
            quoted = true;
            field_started = true;
        } else if (c == ',') {
            end_field();
        } else if (c == '\n') {
            if (!field.empty() || !record.empty() || field_started) end_record();
        } else if (c != '\r') {
            field.push_back(c);
            field_started = true;
        }
    }
    if (quoted) throw MalformedCsv("unterminated quoted field");
    if (!field.empty() || !record.empty() || field_started) end_record();
    return records;
}

inline Table fetch_covid(const CovidQuerySpec& spec, HttpTransport& transport,
                         const CovidSourceConfig& config = {}) {
    const std::string& url =
        spec.level == CovidLevel::state ? config.state_url : config.county_url;
    HttpResponse response = transport.get(url);
    if (response.status != 200) {
        throw HttpError("covid source returned HTTP " + std::to_string(response.status));
    }
    auto records = parse_csv(response.body);
    if (records.empty()) throw MalformedCsv("empty covid table");
    Table table;
    table.header = records[0];
    auto column = [&](const std::string& name) -> std::optional<size_t> {
        for (size_t i = 0; i < table.header.size(); ++i) {
            if (table.header[i] == name) return i;
        }
        return std::nullopt;
    };
    auto date_col = column("date");
    if (!date_col) throw MalformedCsv("covid table lacks a date column");
    auto state_col = column("state");
    auto county_col = column("county");
    for (size_t r = 1; r < records.size(); ++r) {
        const auto& row = records[r];
        if (row.size() != table.header.size()) {
            throw MalformedCsv("row " + std::to_string(r) + " has " +
                               std::to_string(row.size()) + " fields, header has " +
                               std::to_string(table.header.size()));
        }
        const std::string& date = row[*date_col];
        if (date < spec.start_date || date > spec.end_date) continue;
        if (!spec.region.empty()) {
            bool match = state_col && row[*state_col] == spec.region;
            if (!match && spec.level == CovidLevel::county && county_col) {
                match = row[*county_col] == spec.region;
            }
            if (!match) continue;
        }
        table.rows.push_back(row);
    }
    return table;
}

// ---------------------------------------------------------------------------
// OpenTopography DEM requests

inline const std::vector<std::string>& dem_type_catalog() {
    static const std::vector<std::string> catalog = {
        "SRTMGL3",  "SRTMGL1",       "SRTMGL1_E",        "AW3D30",
        "SRTM15Plus", "NASADEM",     "COP30",            "EU_DTM",
        "GEDI_L3",  "GEBCOIceTopo",  "GEBCOSubIceTopo"};
    return catalog;
}

struct DemQuerySpec {
    std::string demtype;
    BBox bbox;

    static DemQuerySpec of(const std::string& demtype, const BBox& bbox) {
        const auto& catalog = dem_type_catalog();
        if (std::find(catalog.begin(), catalog.end(), demtype) == catalog.end()) {
            throw UnknownDemType("'" + demtype + "' is not an available DEM product");
        }
        return DemQuerySpec{demtype, bbox};
    }
};

inline constexpr const char* kOpenTopographyEndpoint =
    "https://portal.opentopography.org/API/globaldem";
inline constexpr const char* kOpenTopographyKeyPlaceholder =
    "{{KEY:OpenTopography:api_key}}";

struct DemRequest {
    std::string url;
    std::vector<std::pair<std::string, std::string>> params;

    std::string full_url() const {
        std::string out = url;
        char sep = '?';
        for (const auto& [k, v] : params) {
            out += sep + k + "=" + url_encode(v);
            sep = '&';
        }
        return out;
    }
};

inline DemRequest build_dem_request(
    const DemQuerySpec& spec,
    const std::string& api_key_placeholder = kOpenTopographyKeyPlaceholder) {
    DemRequest request;
    request.url = kOpenTopographyEndpoint;
    request.params = {
        {"demtype", spec.demtype},
        {"south", format_double(spec.bbox.south)},
        {"north", format_double(spec.bbox.north)},
        {"west", format_double(spec.bbox.west)},
        {"east", format_double(spec.bbox.east)},
        {"outputFormat", "GTiff"},
    };
    if (!api_key_placeholder.empty()) {
        request.params.emplace_back("API_Key", api_key_placeholder);
    }
    return request;
}

} // namespace geodata::sources
