from setuptools import setup

setup(
    name="kerrspring",
    version="0.4.0",
    description="Model, simulate and fit Kerr-enhanced optical springs in optomechanical cavities.",
    author="Tashmam Shafique Satti",
    py_modules=[
        "kerr_params",
        "core_model",
        "steady_state",
        "response",
        "dynamics",
        "estimation",
        "interferometer",
        "kerr_io",
        "recipes",
        "kerrspring",
    ],
    entry_points={
        "console_scripts": [
            "kerrspring = kerrspring:main",
        ],
    },
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
        "Topic :: Scientific/Engineering :: Physics",
    ],
    install_requires=[
        "numpy>=1.22",
        "scipy>=1.9",
        "tomli>=2.0; python_version<'3.11'",
    ],
    extras_require={
        "test": ["pytest>=7.0"],
    },
    python_requires=">=3.9",
)
