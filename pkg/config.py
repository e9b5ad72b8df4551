import os
from dataclasses import dataclass, field
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

@dataclass
class Config:
    """Configuration class for the EIT monotonicity toolkit"""

    # Core Application Settings
    APP_NAME: str = "eitkit"
    VERSION: str = "1.0.0"

    # Mesh Configuration
    MAX_MESH_NODES: int = field(default_factory=lambda: int(os.getenv('MAX_MESH_NODES', '250000')))
    DEFAULT_TARGET_H: float = field(default_factory=lambda: float(os.getenv('DEFAULT_TARGET_H', '0.05')))

    # Boundary Basis Configuration
    BOUNDARY_QUAD_POINTS: int = field(default_factory=lambda: int(os.getenv('BOUNDARY_QUAD_POINTS', '6')))
    DEFAULT_BASIS_SIZE: int = field(default_factory=lambda: int(os.getenv('DEFAULT_BASIS_SIZE', '8')))

    # Linear Solver Configuration
    SOLVER_RTOL: float = field(default_factory=lambda: float(os.getenv('SOLVER_RTOL', '1e-10')))
    DIRECT_SOLVER_MAX_DOFS: int = field(default_factory=lambda: int(os.getenv('DIRECT_SOLVER_MAX_DOFS', '400000')))
    ITERATIVE_RTOL: float = field(default_factory=lambda: float(os.getenv('ITERATIVE_RTOL', '1e-12')))
    ITERATIVE_MAX_ITER: int = field(default_factory=lambda: int(os.getenv('ITERATIVE_MAX_ITER', '20000')))

    # Monotonicity Test Configuration
    TAU_ALLOWANCE: float = field(default_factory=lambda: float(os.getenv('TAU_ALLOWANCE', '0.0')))
    TAU_EPS_FACTOR: float = field(default_factory=lambda: float(os.getenv('TAU_EPS_FACTOR', '1000.0')))
    DEFAULT_THREADS: int = field(default_factory=lambda: int(os.getenv('DEFAULT_THREADS', '1')))

    # Output Configuration
    OUTPUT_DIR: str = field(default_factory=lambda: os.getenv('OUTPUT_DIR', 'results'))

    # Logging Configuration
    LOG_LEVEL: str = field(default_factory=lambda: os.getenv('LOG_LEVEL', 'INFO'))
    LOG_FILE: str = field(default_factory=lambda: os.getenv('LOG_FILE', 'logs/eitkit.log'))

    def validate(self) -> bool:
        """Validate critical configuration settings"""
        if self.MAX_MESH_NODES <= 0:
            raise ValueError("MAX_MESH_NODES must be positive")

        if self.BOUNDARY_QUAD_POINTS < 1:
            raise ValueError("BOUNDARY_QUAD_POINTS must be at least 1")

        if not 0 < self.SOLVER_RTOL < 1 or not 0 < self.ITERATIVE_RTOL < 1:
            raise ValueError("Solver tolerances must lie in (0, 1)")

        if self.TAU_ALLOWANCE < 0 or self.TAU_EPS_FACTOR < 0:
            raise ValueError("Semidefiniteness tolerance settings must be nonnegative")

        if self.DEFAULT_THREADS < 1:
            raise ValueError("DEFAULT_THREADS must be at least 1")

        return True

# Create global config instance
config = Config()

# Validate configuration on import
if __name__ != '__main__':
    try:
        config.validate()
    except ValueError as e:
        print(f"Configuration Error: {e}")
