from .checks import closest_match, is_positive_int, is_probability
from .rng import StreamTag, stream
from .utils import format_vector, parse_columns, parse_int_list
from .workers import available_workers, map_indexed

__all__ = ['closest_match', 'is_positive_int', 'is_probability', 'StreamTag', 'stream', 'format_vector',
           'parse_columns', 'parse_int_list', 'available_workers', 'map_indexed']
