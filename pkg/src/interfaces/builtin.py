from src.interfaces.types import ArrayType, PrimitiveKind as K, TypeDescriptor

EMPTY = TypeDescriptor("std/Empty", ())
STRING = TypeDescriptor("std/String", (("data", K.STRING),))
INT64 = TypeDescriptor("std/Int64", (("data", K.INT64),))
FLOAT64 = TypeDescriptor("std/Float64", (("data", K.FLOAT64),))
BYTE_ARRAY = TypeDescriptor("std/ByteArray", (("data", ArrayType(K.UINT8)),))

VECTOR3 = TypeDescriptor("geometry/Vector3", (
    ("x", K.FLOAT64), ("y", K.FLOAT64), ("z", K.FLOAT64),
))
TWIST = TypeDescriptor("geometry/Twist", (("linear", VECTOR3), ("angular", VECTOR3)))

ADD_TWO_INTS_REQUEST = TypeDescriptor("example/AddTwoInts_Request", (
    ("a", K.INT64), ("b", K.INT64),
))
ADD_TWO_INTS_RESPONSE = TypeDescriptor("example/AddTwoInts_Response", (("sum", K.INT64),))

COUNTDOWN_GOAL = TypeDescriptor("example/Countdown_Goal", (("n", K.INT32),))
COUNTDOWN_RESULT = TypeDescriptor("example/Countdown_Result", (("reached", K.INT32),))
COUNTDOWN_FEEDBACK = TypeDescriptor("example/Countdown_Feedback", (("remaining", K.INT32),))

# Benchmark payload: publish timestamp travels inside the message
PERF_ARRAY = TypeDescriptor("perf/Array", (
    ("stamp_ns", K.INT64),
    ("seq", K.UINT64),
    ("data", ArrayType(K.UINT8)),
))

REGISTRY = {
    d.name: d for d in (
        EMPTY, STRING, INT64, FLOAT64, BYTE_ARRAY, VECTOR3, TWIST,
        ADD_TWO_INTS_REQUEST, ADD_TWO_INTS_RESPONSE,
        COUNTDOWN_GOAL, COUNTDOWN_RESULT, COUNTDOWN_FEEDBACK, PERF_ARRAY,
    )
}


def register(descriptor: TypeDescriptor) -> TypeDescriptor:
    REGISTRY[descriptor.name] = descriptor
    return descriptor


def lookup(name: str):
    return REGISTRY.get(name)
