from .codec import CodecError
from .messages import *  # noqa: F401,F403
from .messages import (MAX_FRAME_SIZE, PAYLOADS, SCHEMA_VERSION, ErrorCode, Kind, Message,
                       ProtocolError, decode, encode, read_frame, split_frames)
