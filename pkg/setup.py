from setuptools import setup, find_packages

setup(
    name="pinning-lab",
    version="0.1.0",
    description="A numerical laboratory for disordered pinning models with fractional-moment delocalization certificates.",
    long_description=open("README.md").read(),
    long_description_content_type="text/markdown",
    packages=find_packages(),
    py_modules=["main"],
    python_requires='>=3.10',
    install_requires=[],  # Use pyproject.toml & uv for dependency management
    include_package_data=True,
    entry_points={"console_scripts": ["pinning-lab=main:main"]},
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
        "Topic :: Scientific/Engineering :: Mathematics",
    ],
    keywords="pinning model renewal disorder free energy fractional moment certificate",
)
