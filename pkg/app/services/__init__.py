from .graph_service import GraphService
from .forecast_service import ForecastService
