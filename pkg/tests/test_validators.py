import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis.strategies import floats, lists

from eitkit.utils.validators import (
    ValidationError,
    require,
    sanitize_filename,
    validate_conductivity_values,
    validate_decreasing,
    validate_positive,
    validate_symmetric,
    validate_target_h,
    validate_unique_cells,
)

def test_require():
    """Test the condition helper"""
    require(True, "never raised")

    with pytest.raises(ValidationError, match="broken"):
        require(False, "broken")

def test_validate_positive():
    """Test positive number validation"""
    assert validate_positive('beta', '0.5') == 0.5

    for bad in (0, -1, math.inf, math.nan, 'abc', None):
        with pytest.raises(ValidationError):
            validate_positive('beta', bad)

def test_validate_target_h():
    """Test mesh width validation"""
    assert validate_target_h(0.05) == (True, None)

    for bad in (0, 1, 1.5, -0.1, 'fine'):
        is_valid, error = validate_target_h(bad)
        assert is_valid is False
        assert 'target_h' in error

def test_validate_conductivity_values():
    """Test conductivity array validation"""
    assert validate_conductivity_values(np.array([1.0, 2.0, 0.5])) == (True, None)

    is_valid, error = validate_conductivity_values(np.array([1.0, np.inf]))
    assert is_valid is False
    assert 'finite' in error

    is_valid, error = validate_conductivity_values(np.array([1.0, 0.0]))
    assert is_valid is False
    assert 'positive' in error

    is_valid, _ = validate_conductivity_values(np.array([]))
    assert is_valid is False

def test_validate_symmetric():
    """Test symmetry check of ND matrices"""
    assert validate_symmetric(np.array([[2.0, 1.0], [1.0, 3.0]])) == (True, None)

    is_valid, error = validate_symmetric(np.array([[2.0, 1.0], [0.0, 3.0]]))
    assert is_valid is False
    assert 'not symmetric' in error

    is_valid, error = validate_symmetric(np.ones((2, 3)))
    assert is_valid is False
    assert 'square' in error

def test_validate_decreasing():
    """Test sweep list validation"""
    assert validate_decreasing('sweeps.eps', [1e-1, 1e-2, 1e-3], 3) == (True, None)

    is_valid, error = validate_decreasing('sweeps.eps', [1e-1, 1e-2], 3)
    assert is_valid is False
    assert 'at least 3' in error

    is_valid, error = validate_decreasing('sweeps.eps', [1e-1, 1e-1, 1e-3], 3)
    assert is_valid is False
    assert 'decreasing' in error

    is_valid, error = validate_decreasing('sweeps.h', [0.1, -0.05], 2)
    assert is_valid is False
    assert 'positive' in error

def test_validate_unique_cells():
    """Test pixel list validation"""
    assert validate_unique_cells([(0, 0), (1, 0)]) == (True, None)
    assert validate_unique_cells([])[0] is False
    assert validate_unique_cells([(0, 0), (0, 0)])[0] is False

def test_sanitize_filename():
    """Test artifact name sanitization"""
    assert sanitize_filename('run1') == 'run1'
    assert sanitize_filename('my run') == 'my_run'
    assert sanitize_filename('../../../etc/passwd') == 'passwd'
    assert sanitize_filename('a:b*c') == 'a_b_c'
    assert sanitize_filename('') == 'experiment'
    assert sanitize_filename('.hidden') == 'experiment_.hidden'

@given(lists(floats(min_value=1e-6, max_value=1.0), min_size=3, max_size=8, unique=True))
def test_sorted_unique_sweeps_are_accepted(values):
    """Any strictly decreasing positive list of sufficient length validates"""
    assert validate_decreasing('sweeps.eps', sorted(values, reverse=True), 3) == (True, None)
