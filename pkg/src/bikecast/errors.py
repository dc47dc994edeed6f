"""Exception hierarchy.

Two families: ``UserError`` for bad configuration or call order, ``DataError``
for problems found in the data itself.  The CLI maps them to exit codes 1 and 2.
"""


class BikecastError(Exception):
    pass


class UserError(BikecastError):
    pass


class DataError(BikecastError):
    pass


class MissingColumn(DataError):
    def __init__(self, column, available=()):
        self.column = column
        super().__init__(f"missing column {column!r}; header has {list(available)}")


class MalformedRow(DataError):
    """A data row that could not be turned into a record.

    ``row`` is the 0-based index of the data row (the header is not counted).
    """

    def __init__(self, row, column, value, reason):
        self.row = row
        self.column = column
        self.value = value
        self.reason = reason
        super().__init__(f"row {row}: column {column!r} value {value!r}: {reason}")


class DuplicateStation(DataError):
    def __init__(self, station_id, row):
        self.station_id = station_id
        self.row = row
        super().__init__(f"station id {station_id} repeated at row {row}")


class EmptyInput(DataError):
    pass


class AllStationsDropped(DataError):
    pass


class EmptyStationList(UserError):
    pass


class UnknownStation(UserError):
    pass


class NoWeatherHistory(DataError):
    pass


class HorizonNotMultiple(UserError):
    pass


class InsufficientData(DataError):
    pass


class EmptyRegion(DataError):
    pass


class EmptyDataset(UserError):
    pass


class DimensionMismatch(UserError):
    pass


class ConvergenceFailure(BikecastError):
    pass


class UnfittedModel(UserError):
    pass


class TooFewRows(UserError):
    pass


class LengthMismatch(UserError):
    pass


class ConfigInvalid(UserError):
    pass


class MissingUpstreamArtifact(UserError):
    pass


class NoResults(UserError):
    pass
