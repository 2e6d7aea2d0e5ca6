"""Exception hierarchy shared by every layer of the hub."""

from __future__ import annotations


class TanaError(Exception):
    """Base class. ``code`` is the stable machine-readable error name."""

    code = "error"
    http_status = 500

    def __init__(self, detail: str = "") -> None:
        super().__init__(detail or self.code)
        self.detail = detail or self.code


# acquisition kernel

class DuplicateSensorId(TanaError):
    code = "duplicate_sensor_id"
    http_status = 409


class InvalidDescriptor(TanaError):
    code = "invalid_descriptor"
    http_status = 422

    def __init__(self, field: str, reason: str = "") -> None:
        super().__init__(f"{field}: {reason}" if reason else field)
        self.field = field


class UnknownSensor(TanaError):
    code = "unknown_sensor"
    http_status = 404


class PeriodOutOfBounds(TanaError):
    code = "period_out_of_bounds"
    http_status = 422


class DuplicateEntry(TanaError):
    code = "duplicate_entry"
    http_status = 422


class DisabledEntry(TanaError):
    code = "disabled_entry"
    http_status = 422


class QueueOverflow(TanaError):
    code = "queue_overflow"
    http_status = 503


class NonIntegralPeriod(TanaError):
    code = "non_integral_period"
    http_status = 422


# scenario loading and simulation

class SchemaError(TanaError):
    code = "schema_error"
    http_status = 422

    def __init__(self, path: str, reason: str) -> None:
        super().__init__(f"{path}: {reason}")
        self.path = path
        self.reason = reason


class GeometryError(TanaError):
    code = "geometry_error"
    http_status = 422


class UnknownEntity(TanaError):
    code = "unknown_entity"
    http_status = 404


# normalization

class DuplicateSpaceId(TanaError):
    code = "duplicate_space_id"
    http_status = 409


class DuplicateMappingId(TanaError):
    code = "duplicate_mapping_id"
    http_status = 409


class UnknownSpace(TanaError):
    code = "unknown_space"
    http_status = 404


class RegistryFrozen(TanaError):
    code = "registry_frozen"
    http_status = 409


class NoPath(TanaError):
    code = "no_path"
    http_status = 422


class PartialMappingUndefined(TanaError):
    code = "partial_mapping_undefined"
    http_status = 422


class OutsideFloorplan(PartialMappingUndefined):
    code = "outside_floorplan"


class FaultedSample(TanaError):
    code = "faulted_sample"
    http_status = 422


class ChannelMismatch(TanaError):
    code = "channel_mismatch"
    http_status = 422


class NonFiniteInput(TanaError):
    code = "non_finite_input"
    http_status = 422


class UnknownView(TanaError):
    code = "unknown_view"
    http_status = 404


# fall detection

class WrongPayloadSpace(TanaError):
    code = "wrong_payload_space"
    http_status = 422


class DegenerateArray(TanaError):
    code = "degenerate_array"
    http_status = 422


class EmptyVolume(TanaError):
    code = "empty_volume"
    http_status = 422


# service

class MalformedQuery(TanaError):
    code = "malformed_query"
    http_status = 400
