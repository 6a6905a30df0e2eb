#pragma once

#include <stdexcept>
#include <string>

// Error taxonomy for the whole library. Every failure that callers are
// expected to branch on gets its own exception type so tests can assert
// the exact condition; all of them derive from geodata::Error.

namespace geodata {

class Error : public std::runtime_error {
  public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

#define GEODATA_DECLARE_ERROR(NAME)                                           \
    class NAME : public Error {                                               \
      public:                                                                 \
        explicit NAME(const std::string& what) : Error(what) {}               \
    }

// registry
GEODATA_DECLARE_ERROR(DuplicateAlias);
GEODATA_DECLARE_ERROR(MalformedManifest);
GEODATA_DECLARE_ERROR(MissingHandbook);
GEODATA_DECLARE_ERROR(EmptyRegistry);
GEODATA_DECLARE_ERROR(UnknownAlias);
GEODATA_DECLARE_ERROR(AliasMismatch);
GEODATA_DECLARE_ERROR(MissingSecret);
GEODATA_DECLARE_ERROR(MalformedPlaceholder);

// prompting
GEODATA_DECLARE_ERROR(EmptyRequest);
GEODATA_DECLARE_ERROR(EmptyIndex);
GEODATA_DECLARE_ERROR(EmptyErrorReport);
GEODATA_DECLARE_ERROR(UnparsableReply);
GEODATA_DECLARE_ERROR(NoCodeBlock);
GEODATA_DECLARE_ERROR(MissingEntryFunction);

// llm_client
GEODATA_DECLARE_ERROR(TransportError);
GEODATA_DECLARE_ERROR(EmptyReply);
GEODATA_DECLARE_ERROR(CassetteMiss);
GEODATA_DECLARE_ERROR(RateLimited);
GEODATA_DECLARE_ERROR(MalformedCassette);

// sandbox
GEODATA_DECLARE_ERROR(InterpreterMissing);
GEODATA_DECLARE_ERROR(SandboxSetupError);

// agent
GEODATA_DECLARE_ERROR(SelectionUnparsable);

// osm_geometry
GEODATA_DECLARE_ERROR(ParseError);
GEODATA_DECLARE_ERROR(EmptyRelation);
GEODATA_DECLARE_ERROR(IoError);

// geo_sources
GEODATA_DECLARE_ERROR(InvalidBBox);
GEODATA_DECLARE_ERROR(LatitudeOutOfRange);
GEODATA_DECLARE_ERROR(LongitudeOutOfRange);
GEODATA_DECLARE_ERROR(InvalidTileCoord);
GEODATA_DECLARE_ERROR(GridTooLarge);
GEODATA_DECLARE_ERROR(ZoomTooLarge);
GEODATA_DECLARE_ERROR(DimensionMismatch);
GEODATA_DECLARE_ERROR(IncompleteGrid);
GEODATA_DECLARE_ERROR(BadTemplate);
GEODATA_DECLARE_ERROR(NotAnImage);
GEODATA_DECLARE_ERROR(HttpError);
GEODATA_DECLARE_ERROR(FixtureMiss);
GEODATA_DECLARE_ERROR(NoMatch);
GEODATA_DECLARE_ERROR(OverpassRemark);
GEODATA_DECLARE_ERROR(ScopeRequired);
GEODATA_DECLARE_ERROR(BadVariableCode);
GEODATA_DECLARE_ERROR(EmptyVariables);
GEODATA_DECLARE_ERROR(ForecastTooLong);
GEODATA_DECLARE_ERROR(HistoricalTooEarly);
GEODATA_DECLARE_ERROR(EmptyRange);
GEODATA_DECLARE_ERROR(RangeError);
GEODATA_DECLARE_ERROR(UnknownDemType);
GEODATA_DECLARE_ERROR(MalformedCsv);

#undef GEODATA_DECLARE_ERROR

} // namespace geodata
