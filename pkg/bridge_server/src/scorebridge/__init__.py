"""Reference server for the newline-delimited JSON score protocol."""

from .models import AnalyticGaussian, AnalyticKde, NeuralCheckpoint
from .schedule import ServerSchedule, linear_schedule, respaced_schedule
from .server import handle_request, main, serve_stdio, serve_tcp

__version__ = "0.1.0"
