"""Basic import tests."""

def test_import():
    """Test that package can be imported."""
    from calibforge import CalibForgeError, RunConfig, Tensor, from_preset
    assert Tensor is not None
    assert issubclass(CalibForgeError, Exception)
    assert RunConfig is not None and from_preset is not None

def test_version():
    """Test version is accessible."""
    from calibforge import __version__
    assert __version__ == "1.0.0"
