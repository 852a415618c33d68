import logging
import os
import threading
from typing import Dict, Optional

from config import config
from models.design import SensingDesign, SensingOperatorPair
from services.measurement_design import make_sensing_operator
from services.serialization import read_design
from utils.hashing import generate_cache_key

logger = logging.getLogger(__name__)


class DesignStore:
    """Lazily loaded active design with a per-rank operator cache."""

    def __init__(self, design_path: str):
        self.design_path = design_path
        self._design: Optional[SensingDesign] = None
        self._operators: Dict[str, SensingOperatorPair] = {}
        self._lock = threading.Lock()

    def is_available(self) -> bool:
        return self._design is not None or os.path.isfile(self.design_path)

    def load(self) -> SensingDesign:
        with self._lock:
            if self._design is None:
                if not os.path.isfile(self.design_path):
                    raise FileNotFoundError(f"No design at {self.design_path}")
                self._design = read_design(self.design_path)
                self._operators.clear()
                logger.info(f"Loaded design from {self.design_path} "
                            f"(f={self._design.block_side}, rank={self._design.rank_q})")
            return self._design

    def reload(self) -> SensingDesign:
        with self._lock:
            self._design = None
        return self.load()

    def operator(self, m_rank: int) -> SensingOperatorPair:
        design = self.load()
        key = generate_cache_key(self.design_path, m_rank)
        with self._lock:
            if key not in self._operators:
                self._operators[key] = make_sensing_operator(design, m_rank)
            return self._operators[key]

    def set_design(self, design: SensingDesign):
        with self._lock:
            self._design = design
            self._operators.clear()


design_store = DesignStore(config.design_path)


def connect_design_store():
    try:
        design_store.load()
        logger.info("✅ Design store ready")
    except FileNotFoundError as e:
        logger.warning(f"Design store empty: {e}")
    except Exception as e:
        logger.error(f"❌ Failed to load design: {e}")
