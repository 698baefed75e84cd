import json
import logging
from typing import Optional

from src.interfaces.types import ArrayType, PrimitiveKind as K, TypeDescriptor
from src.node_management.parameters import (
    ParameterType, check_parameter_value, decode_parameter_value, encode_parameter_value,
)
from src.rpc.future import Future
from src.rpc.service import ServiceType, register_service_type
from src.shared.errors import (
    MiddlewareError, ParameterAccessError, ParameterTypeError, UnknownParameterError,
)

logger = logging.getLogger(__name__)

_STATUS = (("ok", K.BOOL), ("error_kind", K.STRING), ("error", K.STRING))

GET_PARAMETER = register_service_type(ServiceType(
    "std/GetParameter",
    TypeDescriptor("std/GetParameter_Request", (("name", K.STRING),)),
    TypeDescriptor("std/GetParameter_Response", _STATUS + (("type", K.STRING), ("value", K.STRING))),
))
SET_PARAMETER = register_service_type(ServiceType(
    "std/SetParameter",
    TypeDescriptor("std/SetParameter_Request", (("name", K.STRING), ("value", K.STRING))),
    TypeDescriptor("std/SetParameter_Response", _STATUS),
))
LIST_PARAMETERS = register_service_type(ServiceType(
    "std/ListParameters",
    TypeDescriptor("std/ListParameters_Request", (("prefix", K.STRING),)),
    TypeDescriptor("std/ListParameters_Response", (("names", ArrayType(K.STRING)),)),
))
DESCRIBE_PARAMETER = register_service_type(ServiceType(
    "std/DescribeParameter",
    TypeDescriptor("std/DescribeParameter_Request", (("name", K.STRING),)),
    TypeDescriptor("std/DescribeParameter_Response", _STATUS + (
        ("type", K.STRING), ("value", K.STRING), ("read_only", K.BOOL), ("description", K.STRING),
    )),
))

_ERROR_KINDS = {
    ParameterTypeError: "type",
    UnknownParameterError: "unknown",
    ParameterAccessError: "access",
}
_ERRORS = {kind: cls for cls, kind in _ERROR_KINDS.items()}


def parameter_service_names(node_fqn: str) -> dict:
    return {verb: f"{node_fqn}/param/{verb}" for verb in ("get", "set", "list", "describe")}


def _failure(error: MiddlewareError, **fields) -> dict:
    return {"ok": False, "error_kind": _ERROR_KINDS.get(type(error), "other"), "error": str(error), **fields}


class ParameterService:
    """Exposes a node's ParameterStore as `~/param/get|set|list|describe`."""

    def __init__(self, node):
        self.node = node
        self.store = node.parameters
        names = parameter_service_names(node.fqn)
        self.services = [
            node.create_service(names["get"], GET_PARAMETER, self._get),
            node.create_service(names["set"], SET_PARAMETER, self._set),
            node.create_service(names["list"], LIST_PARAMETERS, self._list),
            node.create_service(names["describe"], DESCRIBE_PARAMETER, self._describe),
        ]

    def _get(self, request) -> dict:
        try:
            record = self.store.describe(request.name)
        except UnknownParameterError as e:
            return _failure(e, type="", value="")
        return {"ok": True, "error_kind": "", "error": "", "type": record.declared_type.value,
                "value": encode_parameter_value(record.declared_type, record.value)}

    def _set(self, request) -> dict:
        try:
            record = self.store.describe(request.name)
            self.store.set(request.name, decode_parameter_value(record.declared_type, request.value))
        except (UnknownParameterError, ParameterTypeError, ParameterAccessError) as e:
            logger.info(f"{self.node.fqn}: remote set of {request.name} refused: {e}")
            return _failure(e)
        return {"ok": True, "error_kind": "", "error": ""}

    def _list(self, request) -> dict:
        return {"names": self.store.list(request.prefix)}

    def _describe(self, request) -> dict:
        try:
            record = self.store.describe(request.name)
        except UnknownParameterError as e:
            return _failure(e, type="", value="", read_only=False, description="")
        return {"ok": True, "error_kind": "", "error": "", "type": record.declared_type.value,
                "value": encode_parameter_value(record.declared_type, record.value),
                "read_only": record.read_only, "description": record.description}


def _raise_for(response) -> None:
    if not response.ok:
        raise _ERRORS.get(response.error_kind, MiddlewareError)(response.error)


def _chain(source: Future, convert) -> Future:
    out = Future()

    def done(f: Future):
        if f.exception() is not None:
            out.set_exception(f.exception())
            return
        try:
            out.set_result(convert(f.result()))
        except MiddlewareError as e:
            out.set_exception(e)

    source.add_done_callback(done)
    return out


class ParameterClient:
    """Remote access to another node's parameters through its services."""

    def __init__(self, node, target_fqn: str, timeout: Optional[float] = None):
        self.target = target_fqn
        names = parameter_service_names(target_fqn)
        self._get = node.create_client(names["get"], GET_PARAMETER, timeout)
        self._set = node.create_client(names["set"], SET_PARAMETER, timeout)
        self._list = node.create_client(names["list"], LIST_PARAMETERS, timeout)
        self._describe = node.create_client(names["describe"], DESCRIBE_PARAMETER, timeout)

    def service_is_ready(self) -> bool:
        return all(c.service_is_ready() for c in (self._get, self._set, self._list, self._describe))

    def wait_for_service(self, executor, timeout: float = 5.0) -> bool:
        return executor.spin_until(self.service_is_ready, timeout)

    def get_async(self, name: str) -> Future:
        def convert(response):
            _raise_for(response)
            ptype = ParameterType(response.type)
            return check_parameter_value(ptype, decode_parameter_value(ptype, response.value))
        return _chain(self._get.call_async({"name": name}), convert)

    def set_async(self, name: str, value) -> Future:
        text = json.dumps(list(value) if isinstance(value, (bytes, bytearray, tuple)) else value)

        def convert(response):
            _raise_for(response)
            return True
        return _chain(self._set.call_async({"name": name, "value": text}), convert)

    def list_async(self, prefix: str = "") -> Future:
        return _chain(self._list.call_async({"prefix": prefix}), lambda r: list(r.names))

    def describe_async(self, name: str) -> Future:
        def convert(response):
            _raise_for(response)
            ptype = ParameterType(response.type)
            value = check_parameter_value(ptype, decode_parameter_value(ptype, response.value))
            return {"name": name, "type": ptype.value, "value": value,
                    "read_only": response.read_only, "description": response.description}
        return _chain(self._describe.call_async({"name": name}), convert)

    def _wait(self, future: Future, executor, timeout: float):
        executor.spin_until_future_complete(future, timeout)
        if not future.done():
            raise MiddlewareError(f"No answer from {self.target} within {timeout}s")
        return future.result()

    def get(self, name: str, executor, timeout: float = 6.0):
        return self._wait(self.get_async(name), executor, timeout)

    def set(self, name: str, value, executor, timeout: float = 6.0) -> bool:
        return self._wait(self.set_async(name, value), executor, timeout)

    def list(self, executor, prefix: str = "", timeout: float = 6.0) -> list:
        return self._wait(self.list_async(prefix), executor, timeout)

    def describe(self, name: str, executor, timeout: float = 6.0) -> dict:
        return self._wait(self.describe_async(name), executor, timeout)
