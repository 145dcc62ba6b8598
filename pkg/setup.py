from setuptools import setup, find_packages

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

setup(
    name="xmas_mitigator",
    version="0.1.0",
    description="Moving-average estimation and multi-level mitigation"
                " of adversarial image perturbations",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(include=['xmas_mitigator*']),
    package_dir={'': '.'},
    install_requires=[
        'numpy>=1.24.0',
        'Pillow>=10.0.0',
        'click>=8.0.0',
        'rich>=13.0.0',
        'pydantic>=2.0.0',
        'pydantic-settings>=2.0.0',
        'python-dotenv>=1.0.0',
    ],
    extras_require={
        'test': [
            'pytest>=7.0.0',
            'pytest-asyncio>=0.21.0',
            'pytest-cov>=4.0.0',
        ],
    },
    python_requires='>=3.9',
    entry_points={
        'console_scripts': [
            'xmas=xmas_mitigator.cli:main',
        ],
    },
    include_package_data=True,
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Image Processing",
    ],
    keywords='adversarial-examples mitigation moving-average jpeg fgsm',
)
